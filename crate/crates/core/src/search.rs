//! Graph exploration guided by the relevance function.
//!
//! `explore` is the beam search used both at query time (scoring through the
//! model) and at build time (scoring by vector similarity): a candidate
//! max-heap C, a visited set V and a best-list W of capacity L. Each round
//! pops the most relevant candidate, peeks at the least relevant kept score
//! b (W is never shrunk by the peek), stops when the candidate is worse, and
//! otherwise scores unvisited neighbors, admitting those better than b or
//! while W has room, evicting the worst on overflow. Ties break toward the
//! smaller item id everywhere, which makes searches reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::baselines::EmbeddingSet;
use crate::error::{Error, Result};
use crate::graph::ProximityGraph;
use crate::idhash::{IdMap, IdSet};
use crate::matrix::Matrix;
use crate::model::RelevanceModel;

/// Descending by score, ascending by id on ties.
pub(crate) fn cmp_hits(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub(crate) fn sort_hits(hits: &mut [(u32, f64)]) {
    hits.sort_unstable_by(cmp_hits);
}

/// Max-heap entry popping the best (highest score, lowest id).
#[derive(PartialEq)]
struct BestFirst(u32, f64);

impl Eq for BestFirst {}

impl Ord for BestFirst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.1.total_cmp(&other.1).then(other.0.cmp(&self.0))
    }
}

impl PartialOrd for BestFirst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Max-heap entry popping the worst (lowest score, highest id).
#[derive(PartialEq)]
struct WorstFirst(u32, f64);

impl Eq for WorstFirst {}

impl Ord for WorstFirst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.1.total_cmp(&self.1).then(self.0.cmp(&other.0))
    }
}

impl PartialOrd for WorstFirst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-query score cache: each item is evaluated at most once, and
/// `unique_evals` is exactly the number of distinct items scored.
#[derive(Debug, Default)]
pub struct EvalLedger {
    cache: IdMap<f64>,
}

impl EvalLedger {
    pub fn new() -> Self {
        EvalLedger::default()
    }

    /// Returns the cached score or computes and records it.
    pub fn score_with(
        &mut self,
        id: u32,
        eval: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        if let Some(&score) = self.cache.get(&id) {
            return Ok(score);
        }
        let score = eval()?;
        self.cache.insert(id, score);
        Ok(score)
    }

    pub fn unique_evals(&self) -> usize {
        self.cache.len()
    }

    pub fn get(&self, id: u32) -> Option<f64> {
        self.cache.get(&id).copied()
    }

    /// All scored (id, score) pairs, sorted best-first.
    pub fn scored(&self) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64)> = self.cache.iter().map(|(&k, &v)| (k, v)).collect();
        sort_hits(&mut all);
        all
    }
}

#[derive(Debug, Clone)]
pub struct SearchParams {
    pub k: usize,
    /// Beam width L; capacity of the best-list W. Must be >= k.
    pub beam: usize,
    /// Start the bottom-layer exploration here instead of the graph entry.
    pub entry_override: Option<u32>,
    /// Greedy descent through the upper layers before the bottom beam.
    pub use_hierarchy: bool,
}

impl SearchParams {
    pub fn new(k: usize, beam: usize) -> Self {
        SearchParams {
            k,
            beam,
            entry_override: None,
            use_hierarchy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// (item id, relevance), descending, ids distinct.
    pub hits: Vec<(u32, f64)>,
    /// Distinct items scored by the relevance model.
    pub unique_evals: usize,
    /// Vertex visits summed over all layer explorations.
    pub visited: usize,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u32> {
        self.hits.iter().map(|&(id, _)| id).collect()
    }
}

#[derive(Debug)]
pub struct ExploreOutcome {
    /// Contents of W, descending; every returned id was scored.
    pub hits: Vec<(u32, f64)>,
    pub visited: usize,
}

/// Beam search over one graph layer from `entry` with best-list capacity
/// `beam`.
pub fn explore<F>(layer: &[Vec<u32>], mut score: F, entry: u32, beam: usize) -> Result<ExploreOutcome>
where
    F: FnMut(u32) -> Result<f64>,
{
    if beam == 0 {
        return Err(Error::InvalidInput("beam width must be >= 1".into()));
    }
    if entry as usize >= layer.len() {
        return Err(Error::InvalidInput(format!(
            "entry vertex {entry} absent from layer of {} vertices",
            layer.len()
        )));
    }
    let entry_score = score(entry)?;
    let mut visited = IdSet::default();
    visited.insert(entry);
    let mut candidates = BinaryHeap::new();
    candidates.push(BestFirst(entry, entry_score));
    let mut best: BinaryHeap<WorstFirst> = BinaryHeap::new();
    best.push(WorstFirst(entry, entry_score));

    while let Some(BestFirst(current, current_score)) = candidates.pop() {
        // peek at the least relevant kept element; W is unchanged
        let worst_kept = best.peek().expect("W non-empty").1;
        if current_score < worst_kept {
            break;
        }
        for &adjacent in &layer[current as usize] {
            if !visited.insert(adjacent) {
                continue;
            }
            let adj_score = score(adjacent)?;
            // re-peek: W may have improved while handling earlier neighbors
            let worst_now = best.peek().expect("W non-empty").1;
            if adj_score > worst_now || best.len() < beam {
                candidates.push(BestFirst(adjacent, adj_score));
                best.push(WorstFirst(adjacent, adj_score));
                if best.len() > beam {
                    best.pop();
                }
            }
        }
    }

    let mut hits: Vec<(u32, f64)> = best.into_iter().map(|WorstFirst(id, s)| (id, s)).collect();
    sort_hits(&mut hits);
    Ok(ExploreOutcome {
        hits,
        visited: visited.len(),
    })
}

/// Top-K retrieval on the proximity graph. With `use_hierarchy`, upper layers
/// are descended greedily (beam 1) to refine the entry before the bottom
/// layer is explored with beam L. The ledger is shared across layers, so
/// every item counts at most once toward `unique_evals`.
pub fn search_topk(
    graph: &ProximityGraph,
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    params: &SearchParams,
) -> Result<SearchResult> {
    let mut ledger = EvalLedger::new();
    search_topk_with_ledger(graph, model, items, query, params, &mut ledger)
}

pub fn search_topk_with_ledger(
    graph: &ProximityGraph,
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    params: &SearchParams,
    ledger: &mut EvalLedger,
) -> Result<SearchResult> {
    if params.k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if params.beam < params.k {
        return Err(Error::InvalidInput(format!(
            "beam width {} must be >= k {}",
            params.beam, params.k
        )));
    }
    if graph.num_items() != items.rows() {
        return Err(Error::InvalidInput(format!(
            "graph has {} items but the item matrix has {} rows",
            graph.num_items(),
            items.rows()
        )));
    }

    let mut visited_total = 0usize;
    // An override entry may be absent from the upper layers, so it skips the
    // hierarchical descent and seeds the bottom layer directly.
    let (mut entry, start_layer) = match params.entry_override {
        Some(id) => {
            if id as usize >= graph.num_items() {
                return Err(Error::InvalidInput(format!("entry override {id} out of range")));
            }
            (id, 0)
        }
        None => {
            let top = if params.use_hierarchy { graph.num_layers() - 1 } else { 0 };
            (graph.entry_vertex(), top)
        }
    };

    for layer in (1..=start_layer).rev() {
        let out = explore(
            graph.layer(layer),
            |id| ledger.score_with(id, || model.evaluate(query, items.row(id as usize))),
            entry,
            1,
        )?;
        visited_total += out.visited;
        entry = out.hits[0].0;
    }
    let out = explore(
        graph.layer(0),
        |id| ledger.score_with(id, || model.evaluate(query, items.row(id as usize))),
        entry,
        params.beam,
    )?;
    visited_total += out.visited;

    let mut hits = out.hits;
    hits.truncate(params.k.min(graph.num_items()));
    Ok(SearchResult {
        hits,
        unique_evals: ledger.unique_evals(),
        visited: visited_total,
    })
}

/// Entry vertex for embedding-seeded search: the item whose factor has the
/// largest dot product with the query embedding, ties toward the smaller id.
/// Costs zero relevance-function evaluations.
pub fn rpg_plus_entry(embeddings: &EmbeddingSet, query_embedding: &[f64]) -> Result<u32> {
    if embeddings.num_items() == 0 {
        return Err(Error::InvalidInput("embedding set has no items".into()));
    }
    if query_embedding.len() != embeddings.rank() {
        return Err(Error::DimensionMismatch {
            what: "query embedding",
            expected: embeddings.rank(),
            got: query_embedding.len(),
        });
    }
    let mut best_id = 0u32;
    let mut best_dot = f64::NEG_INFINITY;
    for u in 0..embeddings.num_items() {
        let dot: f64 = embeddings
            .item_factor(u)
            .iter()
            .zip(query_embedding)
            .map(|(a, b)| a * b)
            .sum();
        if dot > best_dot {
            best_dot = dot;
            best_id = u as u32;
        }
    }
    Ok(best_id)
}

/// Exact top-K by scoring every item; ties break toward the smaller id.
pub fn exhaustive_topk(
    model: &RelevanceModel,
    items: &Matrix,
    query: &[f32],
    k: usize,
) -> Result<SearchResult> {
    let n = items.rows();
    if k > n {
        return Err(Error::InvalidInput(format!("k={k} exceeds {n} items")));
    }
    let mut scored: Vec<(u32, f64)> = Vec::with_capacity(n);
    for u in 0..n {
        scored.push((u as u32, model.evaluate(query, items.row(u))?));
    }
    sort_hits(&mut scored);
    scored.truncate(k);
    Ok(SearchResult {
        hits: scored,
        unique_evals: n,
        visited: n,
    })
}
