//! Black-box relevance models: f(query, item) -> score.
//!
//! Four evaluator kinds are supported, all loadable from a UTF-8 JSON file:
//! negative squared L2, dot product, feed-forward MLP, and additive tree
//! ensembles. Models are validated at load time and immutable afterwards, so
//! `evaluate` is safe to call from any number of threads. Scores accumulate
//! in `f64` even though inputs and weights are stored as `f32`, which keeps
//! rankings stable across platforms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairs of (query index, item index); each pair appends the product
/// `query[q] * item[i]` to the assembled model input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairwiseFeatureMap {
    pub pairs: Vec<(usize, usize)>,
}

impl PairwiseFeatureMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        PairwiseFeatureMap { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }
}

/// Concatenates query and item features and appends one product per map pair.
///
/// The result has length `|query| + |item| + |map.pairs|`.
pub fn assemble_features(
    query: &[f32],
    item: &[f32],
    map: Option<&PairwiseFeatureMap>,
) -> Result<Vec<f32>> {
    let n_pairs = map.map_or(0, PairwiseFeatureMap::len);
    let mut out = Vec::with_capacity(query.len() + item.len() + n_pairs);
    out.extend_from_slice(query);
    out.extend_from_slice(item);
    if let Some(map) = map {
        for &(q_idx, i_idx) in &map.pairs {
            if q_idx >= query.len() || i_idx >= item.len() {
                return Err(Error::Config(format!(
                    "pairwise pair ({q_idx}, {i_idx}) out of range for query dim {} / item dim {}",
                    query.len(),
                    item.len()
                )));
            }
            out.push(query[q_idx] * item[i_idx]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// One dense layer; weights are row-major `output_dim x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf(f32),
}

/// Binary decision tree; node 0 is the root. Decision rule: go left when
/// `feature < threshold`, right when `feature >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Walks the tree for one assembled feature vector.
    pub fn score(&self, features: &[f32]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf(v) => return f64::from(*v),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    NegSquaredL2,
    DotProduct,
    Mlp { layers: Vec<MlpLayer> },
    TreeEnsemble { trees: Vec<Tree> },
}

/// A validated, immutable relevance model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    query_dim: usize,
    item_dim: usize,
    feature_map: PairwiseFeatureMap,
    params: ModelParams,
}

impl RelevanceModel {
    pub fn l2(dim: usize) -> Result<Self> {
        RelevanceModel::validated(dim, dim, PairwiseFeatureMap::default(), ModelParams::NegSquaredL2)
    }

    pub fn dot(dim: usize) -> Result<Self> {
        RelevanceModel::validated(dim, dim, PairwiseFeatureMap::default(), ModelParams::DotProduct)
    }

    pub fn mlp(
        query_dim: usize,
        item_dim: usize,
        feature_map: PairwiseFeatureMap,
        layers: Vec<MlpLayer>,
    ) -> Result<Self> {
        RelevanceModel::validated(query_dim, item_dim, feature_map, ModelParams::Mlp { layers })
    }

    pub fn tree_ensemble(
        query_dim: usize,
        item_dim: usize,
        feature_map: PairwiseFeatureMap,
        trees: Vec<Tree>,
    ) -> Result<Self> {
        RelevanceModel::validated(
            query_dim,
            item_dim,
            feature_map,
            ModelParams::TreeEnsemble { trees },
        )
    }

    fn validated(
        query_dim: usize,
        item_dim: usize,
        feature_map: PairwiseFeatureMap,
        params: ModelParams,
    ) -> Result<Self> {
        let model = RelevanceModel {
            query_dim,
            item_dim,
            feature_map,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn item_dim(&self) -> usize {
        self.item_dim
    }

    pub fn feature_map(&self) -> &PairwiseFeatureMap {
        &self.feature_map
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn kind_name(&self) -> &'static str {
        match self.params {
            ModelParams::NegSquaredL2 => "l2",
            ModelParams::DotProduct => "dot",
            ModelParams::Mlp { .. } => "mlp",
            ModelParams::TreeEnsemble { .. } => "tree_ensemble",
        }
    }

    /// Length of the assembled input fed to mlp/tree models.
    pub fn assembled_len(&self) -> usize {
        self.query_dim + self.item_dim + self.feature_map.len()
    }

    /// Scores one query-item pair. Pure and deterministic: identical inputs
    /// yield bit-identical scores.
    pub fn evaluate(&self, query: &[f32], item: &[f32]) -> Result<f64> {
        if query.len() != self.query_dim {
            return Err(Error::DimensionMismatch {
                what: "query",
                expected: self.query_dim,
                got: query.len(),
            });
        }
        if item.len() != self.item_dim {
            return Err(Error::DimensionMismatch {
                what: "item",
                expected: self.item_dim,
                got: item.len(),
            });
        }
        match &self.params {
            ModelParams::NegSquaredL2 => {
                let mut acc = 0.0f64;
                for (q, v) in query.iter().zip(item) {
                    let d = f64::from(*q) - f64::from(*v);
                    acc += d * d;
                }
                Ok(-acc)
            }
            ModelParams::DotProduct => {
                let mut acc = 0.0f64;
                for (q, v) in query.iter().zip(item) {
                    acc += f64::from(*q) * f64::from(*v);
                }
                Ok(acc)
            }
            ModelParams::Mlp { layers } => {
                let input = assemble_features(query, item, Some(&self.feature_map))?;
                let mut x: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
                for (idx, layer) in layers.iter().enumerate() {
                    let mut y = Vec::with_capacity(layer.output_dim);
                    for o in 0..layer.output_dim {
                        let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                        let mut acc = f64::from(layer.bias[o]);
                        for (w, xv) in row.iter().zip(&x) {
                            acc += f64::from(*w) * xv;
                        }
                        let acc = layer.activation.apply(acc);
                        if !acc.is_finite() {
                            return Err(Error::Numeric {
                                context: format!("mlp layer {idx}"),
                                reason: "non-finite activation".into(),
                            });
                        }
                        y.push(acc);
                    }
                    x = y;
                }
                Ok(x[0])
            }
            ModelParams::TreeEnsemble { trees } => {
                let input = assemble_features(query, item, Some(&self.feature_map))?;
                Ok(trees.iter().map(|t| t.score(&input)).sum())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        for (n, &(q, i)) in self.feature_map.pairs.iter().enumerate() {
            if q >= self.query_dim || i >= self.item_dim {
                return Err(Error::ModelLoad {
                    field: format!("pairwise[{n}]"),
                    reason: format!(
                        "pair ({q}, {i}) out of range for query_dim {} / item_dim {}",
                        self.query_dim, self.item_dim
                    ),
                });
            }
        }
        match &self.params {
            ModelParams::NegSquaredL2 | ModelParams::DotProduct => {
                if self.query_dim != self.item_dim {
                    return Err(Error::ModelLoad {
                        field: "item_dim".into(),
                        reason: format!(
                            "{} model requires query_dim == item_dim ({} != {})",
                            self.kind_name(),
                            self.query_dim,
                            self.item_dim
                        ),
                    });
                }
                if !self.feature_map.is_empty() {
                    return Err(Error::ModelLoad {
                        field: "pairwise".into(),
                        reason: "pairwise features are only supported for mlp/tree_ensemble".into(),
                    });
                }
            }
            ModelParams::Mlp { layers } => self.validate_mlp(layers)?,
            ModelParams::TreeEnsemble { trees } => self.validate_trees(trees)?,
        }
        Ok(())
    }

    fn validate_mlp(&self, layers: &[MlpLayer]) -> Result<()> {
        if layers.is_empty() {
            return Err(Error::ModelLoad {
                field: "layers".into(),
                reason: "mlp requires at least one layer".into(),
            });
        }
        let mut expected_input = self.assembled_len();
        for (idx, layer) in layers.iter().enumerate() {
            let field = |name: &str| format!("layers[{idx}].{name}");
            if layer.input_dim != expected_input {
                return Err(Error::ModelLoad {
                    field: field("weights"),
                    reason: format!(
                        "layer input dim {} does not chain from previous output {expected_input}",
                        layer.input_dim
                    ),
                });
            }
            if layer.output_dim == 0 {
                return Err(Error::ModelLoad {
                    field: field("weights"),
                    reason: "layer has zero outputs".into(),
                });
            }
            if layer.weights.len() != layer.output_dim * layer.input_dim {
                return Err(Error::ModelLoad {
                    field: field("weights"),
                    reason: "weight matrix is ragged".into(),
                });
            }
            if layer.bias.len() != layer.output_dim {
                return Err(Error::ModelLoad {
                    field: field("bias"),
                    reason: format!(
                        "bias length {} does not match {} outputs",
                        layer.bias.len(),
                        layer.output_dim
                    ),
                });
            }
            if layer.weights.iter().chain(&layer.bias).any(|w| !w.is_finite()) {
                return Err(Error::ModelLoad {
                    field: field("weights"),
                    reason: "non-finite weight".into(),
                });
            }
            expected_input = layer.output_dim;
        }
        if expected_input != 1 {
            return Err(Error::ModelLoad {
                field: format!("layers[{}].weights", layers.len() - 1),
                reason: format!("final layer must produce 1 output, got {expected_input}"),
            });
        }
        Ok(())
    }

    fn validate_trees(&self, trees: &[Tree]) -> Result<()> {
        if trees.is_empty() {
            return Err(Error::ModelLoad {
                field: "trees".into(),
                reason: "tree_ensemble requires at least one tree".into(),
            });
        }
        let feature_len = self.assembled_len();
        for (t, tree) in trees.iter().enumerate() {
            let field = |n: usize| format!("trees[{t}].nodes[{n}]");
            if tree.nodes.is_empty() {
                return Err(Error::ModelLoad {
                    field: format!("trees[{t}].nodes"),
                    reason: "tree has no nodes".into(),
                });
            }
            // DFS from the root: every node reached exactly once makes it a
            // proper binary tree (no cycles, no shared subtrees).
            let mut seen = vec![false; tree.nodes.len()];
            let mut stack = vec![0usize];
            while let Some(n) = stack.pop() {
                if n >= tree.nodes.len() {
                    return Err(Error::ModelLoad {
                        field: field(n),
                        reason: format!("child index {n} out of range"),
                    });
                }
                if seen[n] {
                    return Err(Error::ModelLoad {
                        field: field(n),
                        reason: "node reachable twice; not a proper binary tree".into(),
                    });
                }
                seen[n] = true;
                match &tree.nodes[n] {
                    TreeNode::Leaf(v) => {
                        if !v.is_finite() {
                            return Err(Error::ModelLoad {
                                field: field(n),
                                reason: "non-finite leaf value".into(),
                            });
                        }
                    }
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= feature_len {
                            return Err(Error::ModelLoad {
                                field: field(n),
                                reason: format!(
                                    "split feature {feature} exceeds assembled feature length {feature_len}"
                                ),
                            });
                        }
                        if !threshold.is_finite() {
                            return Err(Error::ModelLoad {
                                field: field(n),
                                reason: "non-finite threshold".into(),
                            });
                        }
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
            if let Some(unused) = seen.iter().position(|s| !s) {
                return Err(Error::ModelLoad {
                    field: field(unused),
                    reason: "node unreachable from the root".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelLoad {
            field: "(json)".into(),
            reason: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }
}

// ---------------------------------------------------------------------------
// JSON schema

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(rename = "type")]
    kind: String,
    query_dim: usize,
    item_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pairwise: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<Vec<LayerFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trees: Option<Vec<TreeFile>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f32>>,
    bias: Vec<f32>,
    activation: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    nodes: Vec<NodeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeFile {
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: f32,
    },
}

impl ModelFile {
    fn into_model(self) -> Result<RelevanceModel> {
        let feature_map = PairwiseFeatureMap::new(
            self.pairwise
                .unwrap_or_default()
                .into_iter()
                .map(|[q, i]| (q, i))
                .collect(),
        );
        let reject_field = |present: bool, field: &str, kind: &str| -> Result<()> {
            if present {
                Err(Error::ModelLoad {
                    field: field.into(),
                    reason: format!("field not allowed for type \"{kind}\""),
                })
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "l2" | "dot" => {
                reject_field(self.layers.is_some(), "layers", &self.kind)?;
                reject_field(self.trees.is_some(), "trees", &self.kind)?;
                let params = if self.kind == "l2" {
                    ModelParams::NegSquaredL2
                } else {
                    ModelParams::DotProduct
                };
                RelevanceModel::validated(self.query_dim, self.item_dim, feature_map, params)
            }
            "mlp" => {
                reject_field(self.trees.is_some(), "trees", "mlp")?;
                let layers = self
                    .layers
                    .ok_or_else(|| Error::ModelLoad {
                        field: "layers".into(),
                        reason: "missing for type \"mlp\"".into(),
                    })?
                    .into_iter()
                    .enumerate()
                    .map(|(idx, l)| l.into_layer(idx))
                    .collect::<Result<Vec<_>>>()?;
                RelevanceModel::mlp(self.query_dim, self.item_dim, feature_map, layers)
            }
            "tree_ensemble" => {
                reject_field(self.layers.is_some(), "layers", "tree_ensemble")?;
                let trees = self
                    .trees
                    .ok_or_else(|| Error::ModelLoad {
                        field: "trees".into(),
                        reason: "missing for type \"tree_ensemble\"".into(),
                    })?
                    .into_iter()
                    .map(TreeFile::into_tree)
                    .collect::<Vec<_>>();
                RelevanceModel::tree_ensemble(self.query_dim, self.item_dim, feature_map, trees)
            }
            other => Err(Error::ModelLoad {
                field: "type".into(),
                reason: format!("unknown model type \"{other}\""),
            }),
        }
    }

    fn from_model(model: &RelevanceModel) -> Self {
        let pairwise = if model.feature_map.is_empty() {
            None
        } else {
            Some(model.feature_map.pairs.iter().map(|&(q, i)| [q, i]).collect())
        };
        let (layers, trees) = match &model.params {
            ModelParams::Mlp { layers } => (
                Some(layers.iter().map(LayerFile::from_layer).collect()),
                None,
            ),
            ModelParams::TreeEnsemble { trees } => (
                None,
                Some(trees.iter().map(TreeFile::from_tree).collect()),
            ),
            _ => (None, None),
        };
        ModelFile {
            kind: model.kind_name().into(),
            query_dim: model.query_dim,
            item_dim: model.item_dim,
            pairwise,
            layers,
            trees,
        }
    }
}

impl LayerFile {
    fn into_layer(self, idx: usize) -> Result<MlpLayer> {
        let activation = match self.activation.as_str() {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => {
                return Err(Error::ModelLoad {
                    field: format!("layers[{idx}].activation"),
                    reason: format!("unsupported activation \"{other}\""),
                })
            }
        };
        let output_dim = self.weights.len();
        let input_dim = self.weights.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(output_dim * input_dim);
        for row in &self.weights {
            if row.len() != input_dim {
                return Err(Error::ModelLoad {
                    field: format!("layers[{idx}].weights"),
                    reason: "weight matrix is ragged".into(),
                });
            }
            weights.extend_from_slice(row);
        }
        Ok(MlpLayer {
            weights,
            bias: self.bias,
            input_dim,
            output_dim,
            activation,
        })
    }

    fn from_layer(layer: &MlpLayer) -> Self {
        LayerFile {
            weights: (0..layer.output_dim)
                .map(|o| layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim].to_vec())
                .collect(),
            bias: layer.bias.clone(),
            activation: match layer.activation {
                Activation::Relu => "relu".into(),
                Activation::Identity => "identity".into(),
            },
        }
    }
}

impl TreeFile {
    fn into_tree(self) -> Tree {
        Tree {
            nodes: self
                .nodes
                .into_iter()
                .map(|n| match n {
                    NodeFile::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    },
                    NodeFile::Leaf { leaf } => TreeNode::Leaf(leaf),
                })
                .collect(),
        }
    }

    fn from_tree(tree: &Tree) -> Self {
        TreeFile {
            nodes: tree
                .nodes
                .iter()
                .map(|n| match n {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => NodeFile::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: *left,
                        right: *right,
                    },
                    TreeNode::Leaf(v) => NodeFile::Leaf { leaf: *v },
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stump() -> RelevanceModel {
        // one split on feature 0 at 0.5: left -1, right +2
        RelevanceModel::tree_ensemble(
            1,
            0,
            PairwiseFeatureMap::default(),
            vec![Tree {
                nodes: vec![
                    TreeNode::Split {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                    },
                    TreeNode::Leaf(-1.0),
                    TreeNode::Leaf(2.0),
                ],
            }],
        )
        .unwrap()
    }

    #[test]
    fn assemble_examples() {
        let empty = PairwiseFeatureMap::default();
        assert_eq!(
            assemble_features(&[1.0, 2.0], &[3.0, 4.0], Some(&empty)).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        let map = PairwiseFeatureMap::new(vec![(0, 1)]);
        assert_eq!(
            assemble_features(&[1.0, 2.0], &[3.0, 4.0], Some(&map)).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 4.0]
        );
        let map = PairwiseFeatureMap::new(vec![(1, 0), (0, 0)]);
        assert_eq!(
            assemble_features(&[0.0, 0.0], &[5.0, 5.0], Some(&map)).unwrap(),
            vec![0.0, 0.0, 5.0, 5.0, 0.0, 0.0]
        );
    }

    #[test]
    fn assemble_rejects_bad_pair() {
        let map = PairwiseFeatureMap::new(vec![(2, 0)]);
        let err = assemble_features(&[1.0, 2.0], &[3.0], Some(&map)).unwrap_err();
        assert!(err.to_string().contains("(2, 0)"));
    }

    #[test]
    fn evaluate_l2_and_dot() {
        let l2 = RelevanceModel::l2(2).unwrap();
        assert_eq!(l2.evaluate(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -25.0);
        let dot = RelevanceModel::dot(2).unwrap();
        assert_eq!(dot.evaluate(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn evaluate_stump_takes_right_branch_on_tie() {
        // 1.0 >= 0.5 goes right
        assert_eq!(stump().evaluate(&[1.0], &[]).unwrap(), 2.0);
        assert_eq!(stump().evaluate(&[0.5], &[]).unwrap(), 2.0);
        assert_eq!(stump().evaluate(&[0.49], &[]).unwrap(), -1.0);
    }

    #[test]
    fn evaluate_single_layer_mlp() {
        // identity activation, weights (1, 1), bias 0: f((2), (3)) = 5
        let model = RelevanceModel::mlp(
            1,
            1,
            PairwiseFeatureMap::default(),
            vec![MlpLayer {
                weights: vec![1.0, 1.0],
                bias: vec![0.0],
                input_dim: 2,
                output_dim: 1,
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        assert_eq!(model.evaluate(&[2.0], &[3.0]).unwrap(), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let dot = RelevanceModel::dot(2).unwrap();
        assert!(matches!(
            dot.evaluate(&[1.0], &[3.0, 4.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn load_minimal_dot_model() {
        let model =
            RelevanceModel::from_json_str(r#"{"type":"dot","query_dim":2,"item_dim":2}"#).unwrap();
        assert_eq!(model.kind_name(), "dot");
        assert_eq!(model.query_dim(), 2);
    }

    #[test]
    fn load_rejects_mismatched_mlp_shapes() {
        let text = r#"{
            "type": "mlp", "query_dim": 1, "item_dim": 1,
            "layers": [
                {"weights": [[1.0, 1.0], [0.0, 1.0]], "bias": [0.0, 0.0], "activation": "relu"},
                {"weights": [[1.0, 1.0, 1.0]], "bias": [0.0], "activation": "identity"}
            ]
        }"#;
        let err = RelevanceModel::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("layers[1]"), "{err}");
    }

    #[test]
    fn load_rejects_split_index_out_of_range() {
        let text = r#"{
            "type": "tree_ensemble", "query_dim": 1, "item_dim": 1,
            "trees": [{"nodes": [
                {"feature": 2, "threshold": 0.0, "left": 1, "right": 2},
                {"leaf": 0.0}, {"leaf": 1.0}
            ]}]
        }"#;
        let err = RelevanceModel::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("exceeds assembled feature length"), "{err}");
    }

    #[test]
    fn load_rejects_cyclic_tree() {
        let text = r#"{
            "type": "tree_ensemble", "query_dim": 1, "item_dim": 1,
            "trees": [{"nodes": [
                {"feature": 0, "threshold": 0.0, "left": 0, "right": 1},
                {"leaf": 1.0}
            ]}]
        }"#;
        assert!(RelevanceModel::from_json_str(text).is_err());
    }

    #[test]
    fn load_missing_file() {
        assert!(matches!(
            RelevanceModel::load(Path::new("/nonexistent/model.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let model = stump();
        let text = model.to_json_string();
        let back = RelevanceModel::from_json_str(&text).unwrap();
        assert_eq!(model, back);
    }

    fn random_mlp(rng: &mut ChaCha8Rng, query_dim: usize, item_dim: usize) -> RelevanceModel {
        let map = PairwiseFeatureMap::new(vec![(0, 0), (1, 1)]);
        let dims = [query_dim + item_dim + map.len(), 8, 1];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| MlpLayer {
                weights: (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
                input_dim: w[0],
                output_dim: w[1],
                activation: if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        RelevanceModel::mlp(query_dim, item_dim, map, layers).unwrap()
    }

    fn random_pair(rng: &mut ChaCha8Rng, qd: usize, id: usize) -> (Vec<f32>, Vec<f32>) {
        (
            (0..qd).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..id).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
    }

    #[test]
    fn determinism_bit_identical_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = random_mlp(&mut rng, 3, 4);
        for _ in 0..10_000 {
            let (q, v) = random_pair(&mut rng, 3, 4);
            let a = model.evaluate(&q, &v).unwrap();
            let b = model.evaluate(&q, &v).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn closed_forms_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l2 = RelevanceModel::l2(16).unwrap();
        let dot = RelevanceModel::dot(16).unwrap();
        for _ in 0..200 {
            let (q, v) = random_pair(&mut rng, 16, 16);
            let mut l2_naive = 0.0f64;
            let mut dot_naive = 0.0f64;
            for i in 0..16 {
                l2_naive -= (f64::from(q[i]) - f64::from(v[i])).powi(2);
                dot_naive += f64::from(q[i]) * f64::from(v[i]);
            }
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            assert!(rel(l2.evaluate(&q, &v).unwrap(), l2_naive) < 1e-6);
            assert!(rel(dot.evaluate(&q, &v).unwrap(), dot_naive) < 1e-6);
        }
    }

    #[test]
    fn tree_ensemble_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trees = Vec::new();
        for _ in 0..10 {
            trees.push(Tree {
                nodes: vec![
                    TreeNode::Split {
                        feature: rng.random_range(0..4),
                        threshold: rng.random_range(-1.0..1.0),
                        left: 1,
                        right: 2,
                    },
                    TreeNode::Leaf(rng.random_range(-1.0..1.0)),
                    TreeNode::Leaf(rng.random_range(-1.0..1.0)),
                ],
            });
        }
        let ensemble =
            RelevanceModel::tree_ensemble(2, 2, PairwiseFeatureMap::default(), trees.clone())
                .unwrap();
        for _ in 0..100 {
            let (q, v) = random_pair(&mut rng, 2, 2);
            let total = ensemble.evaluate(&q, &v).unwrap();
            let by_parts: f64 = trees
                .iter()
                .map(|t| {
                    let single = RelevanceModel::tree_ensemble(
                        2,
                        2,
                        PairwiseFeatureMap::default(),
                        vec![t.clone()],
                    )
                    .unwrap();
                    single.evaluate(&q, &v).unwrap()
                })
                .sum();
            assert_eq!(total, by_parts);
        }
    }

    #[test]
    fn models_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>(_: &T) {}
        assert_send_sync(&stump());
        // concurrent readers see identical scores
        let model = std::sync::Arc::new(RelevanceModel::l2(4).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let model = model.clone();
                std::thread::spawn(move || {
                    let q = [t as f32, 0.0, 1.0, -1.0];
                    model.evaluate(&q, &[0.0, 0.0, 0.0, 0.0]).unwrap()
                })
            })
            .collect();
        for (t, h) in handles.into_iter().enumerate() {
            let expect = -((t as f64).powi(2) + 2.0);
            assert_eq!(h.join().unwrap(), expect);
        }
    }

    #[test]
    fn zeroed_item_coordinates_zero_the_pairwise_features() {
        let map = PairwiseFeatureMap::new(vec![(0, 1), (2, 3)]);
        let q = vec![1.5, -2.0, 3.0];
        let mut v = vec![9.0, 0.0, 7.0, 0.0];
        let assembled = assemble_features(&q, &v, Some(&map)).unwrap();
        assert_eq!(&assembled[7..], &[0.0, 0.0]);
        // changing the query leaves the appended tail at exactly zero
        v[0] = -4.0;
        let assembled = assemble_features(&[0.0, 5.0, -1.0], &v, Some(&map)).unwrap();
        assert_eq!(&assembled[7..], &[0.0, 0.0]);
    }
}
