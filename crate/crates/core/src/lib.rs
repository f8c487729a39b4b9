//! Top-K retrieval under arbitrary black-box relevance models.
//!
//! Exhaustively scoring every item is infeasible when the scorer is an
//! expensive learned model. The approach here describes each item by its
//! relevance vector (the scores a fixed sample of training queries assigns
//! to it), builds a layered proximity graph under the L2 distance between
//! those vectors, and answers queries by beam-searching the graph guided by
//! the true model, spending only a small number of model evaluations.
//!
//! Modules:
//! - [`model`]: feature assembly and the four relevance-model evaluators
//! - [`matrix`]: row-major `f32` matrices and the `RPGM` file format
//! - [`relevance`]: query sampling, relevance vectors, item similarity
//! - [`graph`]: layered proximity-graph construction and the `RPGG` format
//! - [`search`]: beam-search exploration, evaluation ledger, exhaustive oracle
//! - [`baselines`]: top-scored, SVD embeddings, embedding-candidate reranking
//! - [`eval`]: recall metrics, budget sweeps, ablations, scalability fits
//! - [`synth`]: seeded synthetic dataset and model generation

pub mod baselines;
pub mod error;
pub mod eval;
pub mod graph;
mod idhash;
pub mod matrix;
pub mod model;
pub mod relevance;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{assemble_features, PairwiseFeatureMap, RelevanceModel};
pub use relevance::{
    compute_relevance_vectors, item_similarity, sample_train_queries, RelevanceVectors,
    TrainQuerySample,
};
