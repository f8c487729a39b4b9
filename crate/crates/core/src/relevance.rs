//! Relevance vectors: each item u is described by the vector of scores
//! f(q, u) over a fixed sample X of d training queries, and item similarity
//! is the negative L2 distance between those vectors. This is the
//! Monte-Carlo item-space similarity the proximity graph is built on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::RelevanceModel;

/// Indices of the d training queries forming the sample X.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainQuerySample {
    pub query_ids: Vec<u32>,
    pub seed: u64,
}

/// Draws d unique query indices uniformly without replacement.
/// Deterministic for a fixed seed.
pub fn sample_train_queries(num_train: usize, d: usize, seed: u64) -> Result<TrainQuerySample> {
    if d == 0 || d > num_train {
        return Err(Error::InvalidInput(format!(
            "sample size d={d} must satisfy 1 <= d <= {num_train} train queries"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_ids = rand::seq::index::sample(&mut rng, num_train, d)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    Ok(TrainQuerySample { query_ids, seed })
}

/// The |S| x d matrix of relevance values, rows in item order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVectors {
    matrix: Matrix,
    sample: TrainQuerySample,
}

impl RelevanceVectors {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn sample(&self) -> &TrainQuerySample {
        &self.sample
    }

    pub fn num_items(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, item: usize) -> &[f32] {
        self.matrix.row(item)
    }
}

/// Scores every item against every sampled query; entry (u, i) = f(q^(i), u)
/// stored as f32. Rows are independent and computed in parallel.
pub fn compute_relevance_vectors(
    model: &RelevanceModel,
    items: &Matrix,
    train_queries: &Matrix,
    sample: &TrainQuerySample,
) -> Result<RelevanceVectors> {
    for &qid in &sample.query_ids {
        if qid as usize >= train_queries.rows() {
            return Err(Error::InvalidInput(format!(
                "sampled query id {qid} exceeds {} train queries",
                train_queries.rows()
            )));
        }
    }
    let d = sample.query_ids.len();
    let rows: Vec<Vec<f32>> = (0..items.rows())
        .into_par_iter()
        .map(|u| {
            let item = items.row(u);
            sample
                .query_ids
                .iter()
                .map(|&qid| {
                    let context = || format!("relevance vector (item {u}, query {qid})");
                    let score = model
                        .evaluate(train_queries.row(qid as usize), item)
                        .map_err(|e| Error::Numeric {
                            context: context(),
                            reason: e.to_string(),
                        })?;
                    let stored = score as f32;
                    if !stored.is_finite() {
                        return Err(Error::Numeric {
                            context: context(),
                            reason: format!("score {score} overflows f32 storage"),
                        });
                    }
                    Ok(stored)
                })
                .collect::<Result<Vec<f32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = Matrix::zeros(items.rows(), d);
    for (u, row) in rows.iter().enumerate() {
        matrix.row_mut(u).copy_from_slice(row);
    }
    Ok(RelevanceVectors {
        matrix,
        sample: sample.clone(),
    })
}

/// Similarity between two relevance vectors: -||r_u - r_v||, accumulated in
/// f64. No 1/d normalization; only the ranking of similarities matters.
pub fn item_similarity(r_u: &[f32], r_v: &[f32]) -> Result<f64> {
    if r_u.len() != r_v.len() {
        return Err(Error::DimensionMismatch {
            what: "relevance vector",
            expected: r_u.len(),
            got: r_v.len(),
        });
    }
    Ok(neg_l2(r_u, r_v))
}

/// Unchecked form used in the graph-construction hot loop.
#[inline]
pub(crate) fn neg_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        acc += d * d;
    }
    -acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MlpLayer, Activation, PairwiseFeatureMap};
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_sample_is_permutation() {
        let s = sample_train_queries(5, 5, 123).unwrap();
        let mut ids = s.query_ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let a = sample_train_queries(1000, 100, 42).unwrap();
        let b = sample_train_queries(1000, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_train_queries(1000, 100, 1).unwrap();
        let d = sample_train_queries(1000, 100, 2).unwrap();
        assert_ne!(c.query_ids, d.query_ids);
    }

    #[test]
    fn oversized_sample_rejected() {
        assert!(sample_train_queries(10, 11, 0).is_err());
        assert!(sample_train_queries(10, 0, 0).is_err());
    }

    #[test]
    fn dot_model_rows() {
        let model = RelevanceModel::dot(2).unwrap();
        let items = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let queries = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let sample = TrainQuerySample {
            query_ids: vec![0],
            seed: 0,
        };
        let rv = compute_relevance_vectors(&model, &items, &queries, &sample).unwrap();
        assert_eq!(rv.row(0), &[2.0]);
        assert_eq!(rv.row(1), &[3.0]);
    }

    #[test]
    fn l2_item_equal_to_query_is_row_maximum() {
        let model = RelevanceModel::l2(2).unwrap();
        let items = Matrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 5.0], vec![0.0, 0.0]]).unwrap();
        let queries = Matrix::from_rows(&[vec![4.0, 5.0]]).unwrap();
        let sample = TrainQuerySample {
            query_ids: vec![0],
            seed: 0,
        };
        let rv = compute_relevance_vectors(&model, &items, &queries, &sample).unwrap();
        assert_eq!(rv.row(1), &[0.0]);
        assert!(rv.row(0)[0] < 0.0 && rv.row(2)[0] < 0.0);
    }

    fn small_mlp() -> RelevanceModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dims = [3 + 3, 4, 1];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| MlpLayer {
                weights: (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bias: vec![0.0; w[1]],
                input_dim: w[0],
                output_dim: w[1],
                activation: if i == 1 { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        RelevanceModel::mlp(3, 3, PairwiseFeatureMap::default(), layers).unwrap()
    }

    #[test]
    fn every_entry_matches_scalar_re_evaluation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let model = small_mlp();
        let items =
            Matrix::from_rows(&(0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0f32)).collect()).collect::<Vec<_>>())
                .unwrap();
        let queries =
            Matrix::from_rows(&(0..10).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0f32)).collect()).collect::<Vec<_>>())
                .unwrap();
        let sample = sample_train_queries(10, 10, 1).unwrap();
        let rv = compute_relevance_vectors(&model, &items, &queries, &sample).unwrap();
        for u in 0..50 {
            for (i, &qid) in sample.query_ids.iter().enumerate() {
                let direct = model
                    .evaluate(queries.row(qid as usize), items.row(u))
                    .unwrap() as f32;
                assert_eq!(rv.row(u)[i], direct);
            }
        }
    }

    #[test]
    fn score_overflowing_f32_storage_is_reported_with_context() {
        let model = RelevanceModel::dot(2).unwrap();
        let big = 3.0e38f32;
        let items = Matrix::from_rows(&[vec![big, big]]).unwrap();
        let queries = Matrix::from_rows(&[vec![big, big]]).unwrap();
        let sample = TrainQuerySample { query_ids: vec![0], seed: 0 };
        let err = compute_relevance_vectors(&model, &items, &queries, &sample).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("item 0") && msg.contains("query 0"), "{msg}");
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(item_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(item_similarity(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -5.0);
        assert!(item_similarity(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn similarity_symmetric_nonpositive_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let a: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ab = item_similarity(&a, &b).unwrap();
            let ba = item_similarity(&b, &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert!(ab <= 0.0);
        }
    }

    #[test]
    fn rebuild_with_same_seed_is_bit_identical() {
        let model = small_mlp();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let items =
            Matrix::from_rows(&(0..30).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0f32)).collect()).collect::<Vec<_>>())
                .unwrap();
        let queries =
            Matrix::from_rows(&(0..20).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0f32)).collect()).collect::<Vec<_>>())
                .unwrap();
        let s1 = sample_train_queries(20, 8, 3).unwrap();
        let s2 = sample_train_queries(20, 8, 3).unwrap();
        let rv1 = compute_relevance_vectors(&model, &items, &queries, &s1).unwrap();
        let rv2 = compute_relevance_vectors(&model, &items, &queries, &s2).unwrap();
        assert_eq!(rv1, rv2);
    }

    // ranking agreement between a short and a long relevance-vector sample,
    // measured by Spearman correlation over random item pairs
    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(x: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
            let mut r = vec![0.0; x.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (ra[i] - mean) * (rb[i] - mean);
            va += (ra[i] - mean).powi(2);
            vb += (rb[i] - mean).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn monte_carlo_similarity_sharpens_with_d() {
        let dim = 8;
        let model = RelevanceModel::dot(dim).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let items = Matrix::from_rows(
            &(0..120)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let queries = Matrix::from_rows(
            &(0..1000)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let rv = |d: usize| {
            let sample = sample_train_queries(1000, d, 21).unwrap();
            compute_relevance_vectors(&model, &items, &queries, &sample).unwrap()
        };
        let (rv10, rv100, rv1000) = (rv(10), rv(100), rv(1000));

        let mut pairs = Vec::new();
        for _ in 0..1500 {
            let u = rng.random_range(0..120usize);
            let v = rng.random_range(0..120usize);
            if u != v {
                pairs.push((u, v));
            }
        }
        let sims = |rv: &RelevanceVectors| -> Vec<f64> {
            pairs
                .iter()
                .map(|&(u, v)| -item_similarity(rv.row(u), rv.row(v)).unwrap())
                .collect()
        };
        let (s10, s100, s1000) = (sims(&rv10), sims(&rv100), sims(&rv1000));
        let rho_10 = spearman(&s10, &s1000);
        let rho_100 = spearman(&s100, &s1000);
        assert!(rho_10 > 0.0, "rho(d=10, d=1000) = {rho_10}");
        assert!(
            rho_100 > rho_10,
            "agreement should grow with d: {rho_100} vs {rho_10}"
        );
    }
}
