//! Comparison methods: top-scored reranking, truncated-SVD embeddings of the
//! train relevance matrix, and embedding-candidate reranking. The SVD stands
//! in for a learned two-tower candidate generator: it is the deterministic
//! upper bound for any dot-product embedding model of the same rank, so its
//! numbers should not be read as reproductions of a trained retriever.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::RelevanceModel;
use crate::search::{sort_hits, EvalLedger, SearchResult};

/// Items ordered by mean relevance over the train queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TopScoredIndex {
    /// Item ids sorted by mean train-query relevance, descending; ties break
    /// toward the smaller id.
    pub order: Vec<u32>,
    /// Per-item mean relevance, indexed by item id.
    pub means: Vec<f64>,
}

/// Averages every item's relevance over all train queries.
pub fn build_top_scored(
    model: &RelevanceModel,
    items: &Matrix,
    train_queries: &Matrix,
) -> Result<TopScoredIndex> {
    if items.rows() == 0 || train_queries.rows() == 0 {
        return Err(Error::InvalidInput(
            "top-scored index needs at least one item and one train query".into(),
        ));
    }
    let means: Vec<f64> = (0..items.rows())
        .into_par_iter()
        .map(|u| {
            let mut acc = 0.0f64;
            for q in 0..train_queries.rows() {
                acc += model.evaluate(train_queries.row(q), items.row(u))?;
            }
            Ok(acc / train_queries.rows() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<(u32, f64)> = means.iter().enumerate().map(|(u, &m)| (u as u32, m)).collect();
    sort_hits(&mut order);
    Ok(TopScoredIndex {
        order: order.into_iter().map(|(id, _)| id).collect(),
        means,
    })
}

/// Reranks the N globally top-scored items by the true model; costs exactly
/// N evaluations.
pub fn top_scored_search(
    index: &TopScoredIndex,
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    n: usize,
    k: usize,
) -> Result<SearchResult> {
    if n < k {
        return Err(Error::InvalidInput(format!("candidate count N={n} below k={k}")));
    }
    if n > items.rows() {
        return Err(Error::InvalidInput(format!(
            "candidate count N={n} exceeds {} items",
            items.rows()
        )));
    }
    let mut ledger = EvalLedger::new();
    let mut hits = Vec::with_capacity(n);
    for &id in index.order.iter().take(n) {
        let score = ledger.score_with(id, || model.evaluate(query, items.row(id as usize)))?;
        hits.push((id, score));
    }
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(SearchResult {
        hits,
        unique_evals: ledger.unique_evals(),
        visited: n,
    })
}

/// Rank-r factor embeddings of the train relevance matrix F ~ item_factors x
/// query_factors^T, with the singular scale split evenly between the sides.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rank: usize,
    num_items: usize,
    num_queries: usize,
    /// num_items x rank, row-major
    item_factors: Vec<f64>,
    /// num_queries x rank, row-major
    query_factors: Vec<f64>,
    singular_values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingSidecar {
    rank: usize,
    singular_values: Vec<f64>,
}

impl EmbeddingSet {
    pub fn from_parts(
        item_factors: Vec<f64>,
        query_factors: Vec<f64>,
        num_items: usize,
        num_queries: usize,
        rank: usize,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        if item_factors.len() != num_items * rank
            || query_factors.len() != num_queries * rank
            || singular_values.len() != rank
        {
            return Err(Error::InvalidInput("embedding factor shapes are inconsistent".into()));
        }
        if item_factors.iter().chain(&query_factors).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "embedding factors".into(),
                reason: "non-finite factor".into(),
            });
        }
        Ok(EmbeddingSet {
            rank,
            num_items,
            num_queries,
            item_factors,
            query_factors,
            singular_values,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn item_factor(&self, u: usize) -> &[f64] {
        &self.item_factors[u * self.rank..(u + 1) * self.rank]
    }

    pub fn query_factor(&self, j: usize) -> &[f64] {
        &self.query_factors[j * self.rank..(j + 1) * self.rank]
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Reconstructed relevance of (item u, train query j).
    pub fn reconstruct(&self, u: usize, j: usize) -> f64 {
        self.item_factor(u)
            .iter()
            .zip(self.query_factor(j))
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Writes `{prefix}.items.rpgm`, `{prefix}.queries.rpgm` and
    /// `{prefix}.json`. Factors are stored as f32 in the matrix format.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let items = Matrix::from_vec(
            self.num_items,
            self.rank,
            self.item_factors.iter().map(|&v| v as f32).collect(),
        )?;
        let queries = Matrix::from_vec(
            self.num_queries,
            self.rank,
            self.query_factors.iter().map(|&v| v as f32).collect(),
        )?;
        items.save_rpgm(&sibling(prefix, "items.rpgm"))?;
        queries.save_rpgm(&sibling(prefix, "queries.rpgm"))?;
        let sidecar = EmbeddingSidecar {
            rank: self.rank,
            singular_values: self.singular_values.clone(),
        };
        let json_path = sibling(prefix, "json");
        std::fs::write(
            &json_path,
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )
        .map_err(|e| Error::io(json_path, e))
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let items = Matrix::load_rpgm(&sibling(prefix, "items.rpgm"))?;
        let queries = Matrix::load_rpgm(&sibling(prefix, "queries.rpgm"))?;
        let json_path = sibling(prefix, "json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: EmbeddingSidecar =
            serde_json::from_str(&text).map_err(|e| Error::FileFormat {
                kind: "embedding sidecar",
                path: json_path,
                reason: e.to_string(),
            })?;
        if items.cols() != sidecar.rank || queries.cols() != sidecar.rank {
            return Err(Error::InvalidInput(format!(
                "factor files have {} / {} columns but sidecar rank is {}",
                items.cols(),
                queries.cols(),
                sidecar.rank
            )));
        }
        EmbeddingSet::from_parts(
            items.data().iter().map(|&v| f64::from(v)).collect(),
            queries.data().iter().map(|&v| f64::from(v)).collect(),
            items.rows(),
            queries.rows(),
            sidecar.rank,
            sidecar.singular_values,
        )
    }
}

fn sibling(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    prefix.with_file_name(name)
}

/// Truncated SVD of the relevance matrix (|S| rows of items, |P| columns of
/// train queries). The rank-r reconstruction `item_factors x query_factors^T`
/// is Frobenius-optimal among rank-r matrices.
pub fn factorize_relevance_matrix(relevance_matrix: &Matrix, rank: usize) -> Result<EmbeddingSet> {
    let (n, p) = (relevance_matrix.rows(), relevance_matrix.cols());
    if rank == 0 || rank > n.min(p) {
        return Err(Error::InvalidInput(format!(
            "rank {rank} must lie in 1..={}",
            n.min(p)
        )));
    }
    let f = DMatrix::from_row_iterator(
        n,
        p,
        relevance_matrix.data().iter().map(|&v| f64::from(v)),
    );
    const MAX_ITER: usize = 10_000;
    let mut svd = f
        .try_svd(true, true, f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::Numeric {
            context: "truncated svd".into(),
            reason: format!("did not converge within {MAX_ITER} iterations"),
        })?;
    svd.sort_by_singular_values();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut singular_values = Vec::with_capacity(rank);
    let mut item_factors = vec![0.0f64; n * rank];
    let mut query_factors = vec![0.0f64; p * rank];
    for j in 0..rank {
        let sigma = svd.singular_values[j];
        let scale = sigma.max(0.0).sqrt();
        singular_values.push(sigma);
        for i in 0..n {
            item_factors[i * rank + j] = u[(i, j)] * scale;
        }
        for q in 0..p {
            query_factors[q * rank + j] = v_t[(j, q)] * scale;
        }
    }
    EmbeddingSet::from_parts(item_factors, query_factors, n, p, rank, singular_values)
}

/// Fits a factor vector for an unseen query by probing `m` seeded-random
/// items with the true model and solving the least-squares system against
/// their factors (minimum-norm solution when the system is singular).
/// Charges exactly `m` relevance evaluations.
pub fn embed_query(
    model: &RelevanceModel,
    items: &Matrix,
    embeddings: &EmbeddingSet,
    query: &[f32],
    m: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let mut ledger = EvalLedger::new();
    let w = embed_query_with_ledger(model, items, embeddings, query, m, seed, &mut ledger)?;
    Ok((w, m))
}

pub fn embed_query_with_ledger(
    model: &RelevanceModel,
    items: &Matrix,
    embeddings: &EmbeddingSet,
    query: &[f32],
    m: usize,
    seed: u64,
    ledger: &mut EvalLedger,
) -> Result<Vec<f64>> {
    let n = items.rows();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("probe count m={m} must lie in 1..={n}")));
    }
    if embeddings.num_items() != n {
        return Err(Error::InvalidInput(format!(
            "embedding set covers {} items but the matrix has {n}",
            embeddings.num_items()
        )));
    }
    let rank = embeddings.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = rand::seq::index::sample(&mut rng, n, m);

    let mut a = DMatrix::zeros(m, rank);
    let mut y = nalgebra::DVector::zeros(m);
    for (row, probe) in probes.into_iter().enumerate() {
        let score =
            ledger.score_with(probe as u32, || model.evaluate(query, items.row(probe)))?;
        y[row] = score;
        for j in 0..rank {
            a[(row, j)] = embeddings.item_factor(probe)[j];
        }
    }
    // SVD-based solve yields the minimum-norm least-squares solution even
    // when the normal equations are singular.
    let svd = a.try_svd(true, true, f64::EPSILON, 10_000).ok_or_else(|| Error::Numeric {
        context: "query embedding least squares".into(),
        reason: "svd did not converge".into(),
    })?;
    let w = svd.solve(&y, 1e-12).map_err(|reason| Error::Numeric {
        context: "query embedding least squares".into(),
        reason: reason.to_string(),
    })?;
    Ok(w.iter().copied().collect())
}

/// Candidate generation by embedding dot products (not charged as relevance
/// evaluations) followed by true-model reranking of the top N.
pub fn embedding_rerank_search(
    embeddings: &EmbeddingSet,
    query_factor: &[f64],
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    n: usize,
    k: usize,
) -> Result<SearchResult> {
    let mut ledger = EvalLedger::new();
    embedding_rerank_with_ledger(embeddings, query_factor, model, items, query, n, k, &mut ledger)
}

#[allow(clippy::too_many_arguments)]
pub fn embedding_rerank_with_ledger(
    embeddings: &EmbeddingSet,
    query_factor: &[f64],
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    n: usize,
    k: usize,
    ledger: &mut EvalLedger,
) -> Result<SearchResult> {
    if n < k {
        return Err(Error::InvalidInput(format!("candidate count N={n} below k={k}")));
    }
    if n > items.rows() {
        return Err(Error::InvalidInput(format!(
            "candidate count N={n} exceeds {} items",
            items.rows()
        )));
    }
    if query_factor.len() != embeddings.rank() {
        return Err(Error::DimensionMismatch {
            what: "query factor",
            expected: embeddings.rank(),
            got: query_factor.len(),
        });
    }
    let mut by_dot: Vec<(u32, f64)> = (0..embeddings.num_items())
        .map(|u| {
            let dot = embeddings
                .item_factor(u)
                .iter()
                .zip(query_factor)
                .map(|(a, b)| a * b)
                .sum();
            (u as u32, dot)
        })
        .collect();
    sort_hits(&mut by_dot);

    let mut hits = Vec::with_capacity(n);
    for &(id, _) in by_dot.iter().take(n) {
        let score = ledger.score_with(id, || model.evaluate(query, items.row(id as usize)))?;
        hits.push((id, score));
    }
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(SearchResult {
        hits,
        unique_evals: ledger.unique_evals(),
        visited: n,
    })
}
