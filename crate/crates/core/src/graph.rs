//! Layered proximity graph over relevance vectors.
//!
//! Construction follows the incremental hierarchical scheme: each vertex
//! draws a top level from a geometric law, is routed greedily down from the
//! entry vertex, and on each of its layers is connected to neighbors picked
//! from an `ef_construction`-wide beam search under the similarity
//! `-||r_u - r_v||`. Degree caps are `M` on layers >= 1 and `2M` on layer 0.
//!
//! The entry vertex is item 0: levels are drawn for all items up front and
//! item 0 is assigned the maximum, so it sits on the top layer and every
//! search starts from it.
//!
//! `RPGG` layout, integers little-endian: magic `"RPGG"`, version u32 (= 1),
//! M u32, num_items u32, num_layers u32, entry_vertex u32, one `u8` top
//! level per vertex, then per layer (bottom up) per vertex present on it:
//! neighbor count u16 followed by neighbor ids u32 each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::idhash::IdSet;
use crate::matrix::Matrix;
use crate::model::RelevanceModel;
use crate::relevance::{neg_l2, RelevanceVectors};
use crate::search::{explore, sort_hits};

const RPGG_MAGIC: &[u8; 4] = b"RPGG";
const RPGG_VERSION: u32 = 1;
const MAX_LEVEL: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborSelection {
    /// Keep the M most similar candidates.
    SimpleTopM,
    /// Additionally reject a candidate that is closer to an already-selected
    /// neighbor than to the vertex being connected.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildParams {
    pub m: usize,
    pub ef_construction: usize,
    /// Defaults to 1/ln(M) when `None`.
    pub level_multiplier: Option<f64>,
    pub seed: u64,
    pub selection: NeighborSelection,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            m: 8,
            ef_construction: 100,
            level_multiplier: None,
            seed: 0,
            selection: NeighborSelection::Heuristic,
        }
    }
}

impl BuildParams {
    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("M must be >= 2, got {}", self.m)));
        }
        if self.m > u16::MAX as usize / 2 {
            return Err(Error::Config(format!("M={} too large for the graph format", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(Error::Config(format!(
                "ef_construction {} must be >= M {}",
                self.ef_construction, self.m
            )));
        }
        if let Some(mult) = self.level_multiplier {
            if !(mult > 0.0 && mult.is_finite()) {
                return Err(Error::Config(format!(
                    "level_multiplier must be positive and finite, got {mult}"
                )));
            }
        }
        Ok(())
    }

    pub fn multiplier(&self) -> f64 {
        self.level_multiplier.unwrap_or(1.0 / (self.m as f64).ln())
    }

    /// Degree cap: 2M on the bottom layer, M above.
    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

/// Geometric level assignment: `floor(-ln(u) * multiplier)` for `u` uniform
/// in (0, 1].
pub fn assign_level(u: f64, level_multiplier: f64) -> usize {
    let level = (-u.ln()) * level_multiplier;
    (level.floor() as usize).min(MAX_LEVEL)
}

/// Seeded stream of level draws.
#[derive(Debug, Clone)]
pub struct LevelRng(ChaCha8Rng);

impl LevelRng {
    pub fn new(seed: u64) -> Self {
        LevelRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn draw(&mut self, level_multiplier: f64) -> usize {
        // 1 - random::<f64>() lies in (0, 1], keeping ln finite
        let u = 1.0 - self.0.random::<f64>();
        assign_level(u, level_multiplier)
    }
}

/// Picks at most `m` neighbor ids from `candidates` (id, similarity to the
/// vertex being connected). `sim` gives the similarity between two item ids.
pub fn select_neighbors(
    candidates: &[(u32, f64)],
    m: usize,
    mode: NeighborSelection,
    sim: impl Fn(u32, u32) -> f64,
) -> Vec<u32> {
    let mut sorted: Vec<(u32, f64)> = candidates.to_vec();
    sort_hits(&mut sorted);
    match mode {
        NeighborSelection::SimpleTopM => sorted.iter().take(m).map(|&(id, _)| id).collect(),
        NeighborSelection::Heuristic => {
            let mut selected: Vec<u32> = Vec::with_capacity(m);
            for &(cand, sim_to_base) in &sorted {
                if selected.len() == m {
                    break;
                }
                let dominated = selected.iter().any(|&s| sim(cand, s) > sim_to_base);
                if !dominated {
                    selected.push(cand);
                }
            }
            selected
        }
    }
}

/// Immutable layered proximity graph.
#[derive(Debug, Clone)]
pub struct ProximityGraph {
    num_items: usize,
    levels: Vec<u8>,
    /// adjacency[layer][item]; empty for items absent from the layer
    adjacency: Vec<Vec<Vec<u32>>>,
    entry_vertex: u32,
    params: BuildParams,
}

impl ProximityGraph {
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_layers(&self) -> usize {
        self.adjacency.len()
    }

    pub fn entry_vertex(&self) -> u32 {
        self.entry_vertex
    }

    pub fn level_of(&self, item: u32) -> usize {
        self.levels[item as usize] as usize
    }

    pub fn layer(&self, layer: usize) -> &[Vec<u32>] {
        &self.adjacency[layer]
    }

    pub fn params(&self) -> &BuildParams {
        &self.params
    }

    pub fn mean_degree(&self, layer: usize) -> f64 {
        let (mut edges, mut present) = (0usize, 0usize);
        for (v, nbrs) in self.adjacency[layer].iter().enumerate() {
            if self.levels[v] as usize >= layer {
                present += 1;
                edges += nbrs.len();
            }
        }
        if present == 0 {
            0.0
        } else {
            edges as f64 / present as f64
        }
    }

    /// Checks all structural invariants; connectivity is reported, not
    /// enforced.
    pub fn validate(&self) -> Result<ValidationReport> {
        let n = self.num_items;
        if n == 0 {
            return Err(Error::GraphInvariant("graph has no items".into()));
        }
        if self.entry_vertex as usize >= n {
            return Err(Error::GraphInvariant(format!(
                "entry vertex {} out of range",
                self.entry_vertex
            )));
        }
        let top = self.num_layers() - 1;
        if self.levels[self.entry_vertex as usize] as usize != top {
            return Err(Error::GraphInvariant(format!(
                "entry vertex {} missing from top layer {top}",
                self.entry_vertex
            )));
        }
        if self.levels.iter().map(|&l| l as usize).max() != Some(top) {
            return Err(Error::GraphInvariant(
                "num_layers does not match the maximum vertex level".into(),
            ));
        }
        for layer in 0..self.num_layers() {
            let cap = self.params.max_degree(layer);
            for v in 0..n {
                let nbrs = &self.adjacency[layer][v];
                let present = self.levels[v] as usize >= layer;
                if !present {
                    if !nbrs.is_empty() {
                        return Err(Error::GraphInvariant(format!(
                            "vertex {v} has edges on layer {layer} above its level"
                        )));
                    }
                    continue;
                }
                if nbrs.len() > cap {
                    return Err(Error::GraphInvariant(format!(
                        "vertex {v} exceeds degree cap {cap} on layer {layer}: {}",
                        nbrs.len()
                    )));
                }
                for &nb in nbrs {
                    if nb as usize >= n {
                        return Err(Error::GraphInvariant(format!(
                            "vertex {v} has out-of-range neighbor {nb} on layer {layer}"
                        )));
                    }
                    if nb == v as u32 {
                        return Err(Error::GraphInvariant(format!(
                            "vertex {v} has a self-loop on layer {layer}"
                        )));
                    }
                    // nesting: a neighbor must itself be present on the layer
                    if (self.levels[nb as usize] as usize) < layer {
                        return Err(Error::GraphInvariant(format!(
                            "vertex {v} links to {nb} absent from layer {layer}"
                        )));
                    }
                }
            }
        }
        // BFS over layer 0 from the entry vertex
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[self.entry_vertex as usize] = true;
        queue.push_back(self.entry_vertex);
        let mut reachable = 1usize;
        while let Some(v) = queue.pop_front() {
            for &nb in &self.adjacency[0][v as usize] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    reachable += 1;
                    queue.push_back(nb);
                }
            }
        }
        Ok(ValidationReport {
            num_items: n,
            num_layers: self.num_layers(),
            layer0_reachable: reachable,
            mean_degree_layer0: self.mean_degree(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(RPGG_MAGIC).map_err(io)?;
        w.write_all(&RPGG_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.params.m as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.num_items as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.num_layers() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&self.entry_vertex.to_le_bytes()).map_err(io)?;
        w.write_all(&self.levels).map_err(io)?;
        for layer in 0..self.num_layers() {
            for v in 0..self.num_items {
                if (self.levels[v] as usize) < layer {
                    continue;
                }
                let nbrs = &self.adjacency[layer][v];
                w.write_all(&(nbrs.len() as u16).to_le_bytes()).map_err(io)?;
                for nb in nbrs {
                    w.write_all(&nb.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    /// Loads an `RPGG` file. Build parameters other than M are not stored in
    /// the format and come back as defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| Error::FileFormat {
            kind: "RPGG",
            path: path.to_path_buf(),
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header".into()))?;
        if &magic != RPGG_MAGIC {
            return Err(fmt(format!("bad magic bytes {magic:?}")));
        }
        let version = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))?;
        if version != RPGG_VERSION {
            return Err(fmt(format!(
                "unsupported version {version}, expected {RPGG_VERSION}"
            )));
        }
        let m = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))? as usize;
        let num_items = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))? as usize;
        let num_layers = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))? as usize;
        let entry_vertex = read_u32(&mut r).map_err(|_| fmt("truncated header".into()))?;
        if num_layers == 0 || num_items == 0 {
            return Err(fmt("graph must have at least one item and one layer".into()));
        }
        let mut levels = vec![0u8; num_items];
        r.read_exact(&mut levels).map_err(|_| fmt("truncated level table".into()))?;
        let mut adjacency = vec![vec![Vec::new(); num_items]; num_layers];
        for (layer, lists) in adjacency.iter_mut().enumerate() {
            for (v, list) in lists.iter_mut().enumerate() {
                if (levels[v] as usize) < layer {
                    continue;
                }
                let count = read_u16(&mut r)
                    .map_err(|_| fmt(format!("truncated adjacency of vertex {v} layer {layer}")))?;
                let mut nbrs = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    nbrs.push(read_u32(&mut r).map_err(|_| {
                        fmt(format!("truncated adjacency of vertex {v} layer {layer}"))
                    })?);
                }
                *list = nbrs;
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(fmt("trailing bytes after adjacency".into()));
        }
        let params = BuildParams {
            m,
            ef_construction: BuildParams::default().ef_construction.max(m),
            ..BuildParams::default()
        };
        Ok(ProximityGraph {
            num_items,
            levels,
            adjacency,
            entry_vertex,
            params,
        })
    }

    /// Equality over what the file format persists: adjacency, levels,
    /// entry vertex and M.
    pub fn same_structure(&self, other: &ProximityGraph) -> bool {
        self.num_items == other.num_items
            && self.levels == other.levels
            && self.adjacency == other.adjacency
            && self.entry_vertex == other.entry_vertex
            && self.params.m == other.params.m
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub num_items: usize,
    pub num_layers: usize,
    pub layer0_reachable: usize,
    pub mean_degree_layer0: f64,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

/// Incremental builder. Vertices are rows of `vectors`; insertion draws each
/// vertex level from the seeded stream unless one is supplied.
pub struct GraphBuilder<'a> {
    vectors: &'a Matrix,
    params: BuildParams,
    rng: LevelRng,
    levels: Vec<u8>,
    inserted: Vec<bool>,
    adjacency: Vec<Vec<Vec<u32>>>,
    entry_vertex: Option<u32>,
    count: usize,
}

impl<'a> GraphBuilder<'a> {
    pub fn new(vectors: &'a Matrix, params: BuildParams) -> Result<Self> {
        params.validate()?;
        if vectors.rows() == 0 {
            return Err(Error::InvalidInput("cannot build a graph on zero items".into()));
        }
        if vectors.rows() > u32::MAX as usize {
            return Err(Error::InvalidInput("more items than u32 ids".into()));
        }
        let n = vectors.rows();
        let rng = LevelRng::new(params.seed);
        Ok(GraphBuilder {
            vectors,
            params,
            rng,
            levels: vec![0; n],
            inserted: vec![false; n],
            adjacency: Vec::new(),
            entry_vertex: None,
            count: 0,
        })
    }

    /// Inserts `id`, drawing its level from the builder's RNG stream.
    pub fn insert_vertex(&mut self, id: u32) -> Result<()> {
        let mult = self.params.multiplier();
        let level = self.rng.draw(mult);
        self.insert_with_level(id, level)
    }

    pub fn insert_with_level(&mut self, id: u32, level: usize) -> Result<()> {
        let n = self.vectors.rows();
        if id as usize >= n {
            return Err(Error::InvalidInput(format!(
                "vertex id {id} has no vector row (only {n} rows)"
            )));
        }
        if self.inserted[id as usize] {
            return Err(Error::InvalidInput(format!("duplicate vertex id {id}")));
        }
        let level = level.min(MAX_LEVEL);
        while self.adjacency.len() <= level {
            self.adjacency.push(vec![Vec::new(); n]);
        }
        self.levels[id as usize] = level as u8;
        self.inserted[id as usize] = true;
        self.count += 1;

        let Some(current_entry) = self.entry_vertex else {
            self.entry_vertex = Some(id);
            return Ok(());
        };

        let new_row = self.vectors.row(id as usize);
        let sim_to_new = |other: u32| neg_l2(new_row, self.vectors.row(other as usize));
        let sim = |a: u32, b: u32| neg_l2(self.vectors.row(a as usize), self.vectors.row(b as usize));

        let top = self.levels[current_entry as usize] as usize;
        let mut entry = current_entry;
        // greedy descent over layers above the new vertex's level
        for layer in ((level + 1)..=top).rev() {
            let out = explore(&self.adjacency[layer], |v| Ok(sim_to_new(v)), entry, 1)?;
            entry = out.hits[0].0;
        }
        // connect on each shared layer, top down
        for layer in (0..=level.min(top)).rev() {
            let out = explore(
                &self.adjacency[layer],
                |v| Ok(sim_to_new(v)),
                entry,
                self.params.ef_construction,
            )?;
            let selected = select_neighbors(&out.hits, self.params.m, self.params.selection, sim);
            for &nb in &selected {
                self.adjacency[layer][id as usize].push(nb);
                self.adjacency[layer][nb as usize].push(id);
                self.prune_if_over_cap(nb, layer);
            }
            entry = out.hits[0].0;
        }
        if level > top {
            self.entry_vertex = Some(id);
        }
        Ok(())
    }

    fn prune_if_over_cap(&mut self, v: u32, layer: usize) {
        let cap = self.params.max_degree(layer);
        if self.adjacency[layer][v as usize].len() <= cap {
            return;
        }
        let base = self.vectors.row(v as usize);
        let candidates: Vec<(u32, f64)> = self.adjacency[layer][v as usize]
            .iter()
            .map(|&nb| (nb, neg_l2(base, self.vectors.row(nb as usize))))
            .collect();
        let sim = |a: u32, b: u32| neg_l2(self.vectors.row(a as usize), self.vectors.row(b as usize));
        self.adjacency[layer][v as usize] =
            select_neighbors(&candidates, cap, self.params.selection, sim);
    }

    pub fn finish(self) -> Result<ProximityGraph> {
        if self.count != self.vectors.rows() {
            return Err(Error::InvalidInput(format!(
                "only {} of {} vertices inserted",
                self.count,
                self.vectors.rows()
            )));
        }
        let graph = ProximityGraph {
            num_items: self.vectors.rows(),
            levels: self.levels,
            adjacency: self.adjacency,
            entry_vertex: self.entry_vertex.expect("non-empty build"),
            params: self.params,
        };
        Ok(graph)
    }

    /// Snapshot of the partially built graph, for inspection between
    /// insertions. Uninserted vertices appear isolated at level 0.
    pub fn partial_graph(&self) -> Option<ProximityGraph> {
        let entry_vertex = self.entry_vertex?;
        Some(ProximityGraph {
            num_items: self.vectors.rows(),
            levels: self.levels.clone(),
            adjacency: self.adjacency.clone(),
            entry_vertex,
            params: self.params.clone(),
        })
    }
}

/// Builds the graph over all rows of `vectors` in id order, deterministically
/// for a fixed seed. Levels are pre-drawn and item 0 receives the maximum, so
/// the entry vertex is item 0 on the top layer.
pub fn build_graph(vectors: &Matrix, params: &BuildParams) -> Result<ProximityGraph> {
    let mut builder = GraphBuilder::new(vectors, params.clone())?;
    let mult = builder.params.multiplier();
    let mut levels: Vec<usize> = (0..vectors.rows()).map(|_| builder.rng.draw(mult)).collect();
    let max_level = levels.iter().copied().max().unwrap_or(0);
    levels[0] = max_level;
    for (id, level) in levels.into_iter().enumerate() {
        builder.insert_with_level(id as u32, level)?;
    }
    builder.finish()
}

/// Builds the relevance proximity graph for a dataset: samples d train
/// queries, computes relevance vectors, builds the graph over them.
pub fn build_relevance_graph(
    model: &RelevanceModel,
    items: &Matrix,
    train_queries: &Matrix,
    d: usize,
    params: &BuildParams,
) -> Result<(ProximityGraph, RelevanceVectors)> {
    let sample = crate::relevance::sample_train_queries(train_queries.rows(), d, params.seed)?;
    let vectors = crate::relevance::compute_relevance_vectors(model, items, train_queries, &sample)?;
    let graph = build_graph(vectors.matrix(), params)?;
    Ok((graph, vectors))
}

/// Baseline graph over L2-normalized raw item features instead of relevance
/// vectors.
pub fn build_item_feature_graph(item_features: &Matrix, params: &BuildParams) -> Result<ProximityGraph> {
    let mut normalized = item_features.clone();
    let mut zero_rows = Vec::new();
    for i in 0..normalized.rows() {
        let row = normalized.row_mut(i);
        let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_rows.push(i);
            continue;
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    if !zero_rows.is_empty() {
        zero_rows.truncate(8);
        return Err(Error::InvalidInput(format!(
            "cannot L2-normalize zero-norm item rows {zero_rows:?}"
        )));
    }
    build_graph(&normalized, params)
}

/// Deduplicated reachability check used by tests: BFS over layer 0.
pub fn layer0_reachable(graph: &ProximityGraph) -> usize {
    let mut seen: IdSet = IdSet::default();
    let mut queue = std::collections::VecDeque::new();
    seen.insert(graph.entry_vertex());
    queue.push_back(graph.entry_vertex());
    while let Some(v) = queue.pop_front() {
        for &nb in &graph.layer(0)[v as usize] {
            if seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    seen.len()
}
