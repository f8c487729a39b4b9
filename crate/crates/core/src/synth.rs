//! Seeded synthetic datasets: Gaussian-mixture feature matrices plus a
//! randomly parameterized model of the requested kind. Replaces proprietary
//! data so experiments run anywhere; identical configs and seeds produce
//! bit-identical bundles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    Activation, MlpLayer, PairwiseFeatureMap, RelevanceModel, Tree, TreeNode,
};

#[derive(Debug, Clone, PartialEq)]
pub enum GenModelKind {
    /// Sanity-check mode: query_dim == item_dim, f(q, v) = -||q - v||^2.
    L2,
    Dot,
    Mlp { hidden: Vec<usize>, pairwise: usize },
    TreeEnsemble { trees: usize, depth: usize, pairwise: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_items: usize,
    pub num_train_queries: usize,
    pub num_test_queries: usize,
    pub query_dim: usize,
    pub item_dim: usize,
    /// Gaussian mixture components per feature space.
    pub clusters: usize,
    pub model: GenModelKind,
    pub seed: u64,
}

impl GenConfig {
    pub fn sanity_l2(num_items: usize, num_train: usize, num_test: usize, dim: usize, seed: u64) -> Self {
        GenConfig {
            num_items,
            num_train_queries: num_train,
            num_test_queries: num_test,
            query_dim: dim,
            item_dim: dim,
            clusters: 16,
            model: GenModelKind::L2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_items == 0 || self.num_train_queries == 0 || self.num_test_queries == 0 {
            return Err(Error::Config("all dataset counts must be >= 1".into()));
        }
        if self.query_dim == 0 || self.item_dim == 0 {
            return Err(Error::Config("feature dimensions must be >= 1".into()));
        }
        if self.clusters == 0 {
            return Err(Error::Config("cluster count must be >= 1".into()));
        }
        match &self.model {
            GenModelKind::L2 | GenModelKind::Dot if self.query_dim != self.item_dim => {
                Err(Error::Config(
                    "l2/dot generation requires query_dim == item_dim".into(),
                ))
            }
            GenModelKind::TreeEnsemble { trees, depth, .. } if *trees == 0 || *depth == 0 => {
                Err(Error::Config("tree ensembles need trees >= 1 and depth >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Everything one experiment consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub items: Matrix,
    pub train_queries: Matrix,
    pub test_queries: Matrix,
    pub model: RelevanceModel,
}

pub fn generate(cfg: &GenConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");

    // mixture centers, then points = center + 0.5 * noise
    let draw_mixture = |rng: &mut ChaCha8Rng, rows: usize, dim: usize, centers: &[Vec<f64>]| {
        let mut m = Matrix::zeros(rows, dim);
        for r in 0..rows {
            let c = &centers[rng.random_range(0..centers.len())];
            let row = m.row_mut(r);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (c[j] + 0.5 * normal.sample(rng)) as f32;
            }
        }
        m
    };
    let draw_centers = |rng: &mut ChaCha8Rng, dim: usize, k: usize| -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
            .collect()
    };

    let shared_space = matches!(cfg.model, GenModelKind::L2 | GenModelKind::Dot);
    let item_centers = draw_centers(&mut rng, cfg.item_dim, cfg.clusters);
    let query_centers = if shared_space {
        item_centers.clone()
    } else {
        draw_centers(&mut rng, cfg.query_dim, cfg.clusters)
    };
    let items = draw_mixture(&mut rng, cfg.num_items, cfg.item_dim, &item_centers);
    let train_queries = draw_mixture(&mut rng, cfg.num_train_queries, cfg.query_dim, &query_centers);
    let test_queries = draw_mixture(&mut rng, cfg.num_test_queries, cfg.query_dim, &query_centers);

    let model = match &cfg.model {
        GenModelKind::L2 => RelevanceModel::l2(cfg.item_dim)?,
        GenModelKind::Dot => RelevanceModel::dot(cfg.item_dim)?,
        GenModelKind::Mlp { hidden, pairwise } => {
            let map = random_pairwise(&mut rng, cfg.query_dim, cfg.item_dim, *pairwise);
            random_mlp(&mut rng, cfg.query_dim, cfg.item_dim, map, hidden)?
        }
        GenModelKind::TreeEnsemble { trees, depth, pairwise } => {
            let map = random_pairwise(&mut rng, cfg.query_dim, cfg.item_dim, *pairwise);
            random_tree_ensemble(
                &mut rng,
                cfg.query_dim,
                cfg.item_dim,
                map,
                *trees,
                *depth,
                &items,
                &train_queries,
            )?
        }
    };
    Ok(DatasetBundle {
        items,
        train_queries,
        test_queries,
        model,
    })
}

fn random_pairwise(
    rng: &mut ChaCha8Rng,
    query_dim: usize,
    item_dim: usize,
    count: usize,
) -> PairwiseFeatureMap {
    let mut pairs = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    while pairs.len() < count {
        let pair = (rng.random_range(0..query_dim), rng.random_range(0..item_dim));
        if seen.insert(pair) || seen.len() >= query_dim * item_dim {
            pairs.push(pair);
        }
    }
    PairwiseFeatureMap::new(pairs)
}

fn random_mlp(
    rng: &mut ChaCha8Rng,
    query_dim: usize,
    item_dim: usize,
    map: PairwiseFeatureMap,
    hidden: &[usize],
) -> Result<RelevanceModel> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut dims = vec![query_dim + item_dim + map.len()];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let layers: Vec<MlpLayer> = dims
        .windows(2)
        .enumerate()
        .map(|(idx, w)| {
            let (input, output) = (w[0], w[1]);
            let scale = 1.0 / (input as f64).sqrt();
            MlpLayer {
                weights: (0..input * output)
                    .map(|_| (normal.sample(rng) * scale) as f32)
                    .collect(),
                bias: (0..output).map(|_| (0.1 * normal.sample(rng)) as f32).collect(),
                input_dim: input,
                output_dim: output,
                activation: if idx + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    RelevanceModel::mlp(query_dim, item_dim, map, layers)
}

#[allow(clippy::too_many_arguments)]
fn random_tree_ensemble(
    rng: &mut ChaCha8Rng,
    query_dim: usize,
    item_dim: usize,
    map: PairwiseFeatureMap,
    num_trees: usize,
    depth: usize,
    items: &Matrix,
    train_queries: &Matrix,
) -> Result<RelevanceModel> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let feature_len = query_dim + item_dim + map.len();
    // thresholds are drawn from assembled features of random data pairs, so
    // splits land inside the data distribution
    let sample_threshold = |rng: &mut ChaCha8Rng, feature: usize| -> f32 {
        let q = train_queries.row(rng.random_range(0..train_queries.rows()));
        let v = items.row(rng.random_range(0..items.rows()));
        let assembled = crate::model::assemble_features(q, v, Some(&map)).expect("valid map");
        assembled[feature]
    };
    let mut trees = Vec::with_capacity(num_trees);
    for _ in 0..num_trees {
        // complete binary tree: splits down to `depth`, then leaves
        let mut nodes = Vec::new();
        let mut frontier = vec![(0usize, 0usize)]; // (node index, depth)
        nodes.push(TreeNode::Leaf(0.0)); // placeholder for the root
        while let Some((idx, d)) = frontier.pop() {
            if d == depth {
                nodes[idx] = TreeNode::Leaf(normal.sample(rng) as f32);
                continue;
            }
            let feature = rng.random_range(0..feature_len);
            let threshold = sample_threshold(rng, feature);
            let left = nodes.len();
            let right = nodes.len() + 1;
            nodes.push(TreeNode::Leaf(0.0));
            nodes.push(TreeNode::Leaf(0.0));
            nodes[idx] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            };
            frontier.push((left, d + 1));
            frontier.push((right, d + 1));
        }
        trees.push(Tree { nodes });
    }
    RelevanceModel::tree_ensemble(query_dim, item_dim, map, trees)
}
