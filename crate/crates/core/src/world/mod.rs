//! Ground-truth posteriors with controllable logit spectra, training-pair
//! sampling, and ingestion of small text corpora.

mod corpus;

pub use corpus::{hashed_ngram_features, ingest_tsv, Corpus};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{cumulative, logsumexp_unchecked, sample_cdf, Matrix, RandomStream};

/// `P⋆(d|q)` for `m` queries and `N` documents, with the target logit matrix `S⋆`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthPosterior {
    logits: Matrix,
    posterior: Matrix,
    /// Requested singular values of `logits` (empty when built from explicit tables).
    spectrum: Vec<f64>,
}

/// Logit assigned to zero-probability entries of explicit posteriors; `exp` of it underflows to 0.
pub const ZERO_MASS_LOGIT: f64 = -1.0e4;

impl GroundTruthPosterior {
    /// Row-softmax (temperature 1) of an explicit logit matrix.
    pub fn from_logits(logits: Matrix) -> Result<Self> {
        if !logits.is_finite() {
            return Err(LabError::domain("world logits must be finite"));
        }
        let posterior = row_softmax(&logits);
        Ok(Self {
            logits,
            posterior,
            spectrum: Vec::new(),
        })
    }

    /// Explicit row-stochastic table. Zero entries get [`ZERO_MASS_LOGIT`] in the logit matrix.
    pub fn from_posterior(posterior: Matrix) -> Result<Self> {
        for i in 0..posterior.rows() {
            let row = posterior.row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(LabError::domain(format!(
                    "posterior row {i} has entries outside [0,1]"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(LabError::domain(format!(
                    "posterior row {i} sums to {total}"
                )));
            }
        }
        let logits = Matrix::from_fn(posterior.rows(), posterior.cols(), |i, j| {
            let p = posterior[(i, j)];
            if p > 0.0 {
                p.ln()
            } else {
                ZERO_MASS_LOGIT
            }
        });
        Ok(Self {
            logits,
            posterior,
            spectrum: Vec::new(),
        })
    }

    pub fn num_queries(&self) -> usize {
        self.posterior.rows()
    }

    pub fn num_docs(&self) -> usize {
        self.posterior.cols()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn posterior(&self) -> &Matrix {
        &self.posterior
    }

    pub fn row(&self, query: usize) -> &[f64] {
        self.posterior.row(query)
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// World over the first `n` documents with every posterior row renormalized.
    pub fn restrict_to_first(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.num_docs() {
            return Err(LabError::domain(format!(
                "cannot restrict {} documents to {n}",
                self.num_docs()
            )));
        }
        let logits = Matrix::from_fn(self.num_queries(), n, |i, j| self.logits[(i, j)]);
        let posterior = row_softmax(&logits);
        Ok(Self {
            logits,
            posterior,
            spectrum: Vec::new(),
        })
    }

    /// Mean entropy `E_q[H(P⋆(·|q))]` under uniform queries.
    pub fn mean_entropy(&self) -> f64 {
        let m = self.num_queries();
        (0..m)
            .map(|q| {
                -self
                    .row(q)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|p| p * p.ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / m as f64
    }
}

fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let lse = logsumexp_unchecked(row);
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// World whose logits are `U · diag(σ) · Vᵀ` with seeded random orthonormal `U`, `V`.
pub fn make_spectral_world(
    num_queries: usize,
    num_docs: usize,
    singular_values: &[f64],
    stream: &RandomStream,
) -> Result<GroundTruthPosterior> {
    let k = singular_values.len();
    if num_queries == 0 || num_docs == 0 {
        return Err(LabError::domain(
            "world needs at least one query and one document",
        ));
    }
    if k > num_queries.min(num_docs) {
        return Err(LabError::domain(format!(
            "spectrum of length {k} exceeds min(m, N) = {}",
            num_queries.min(num_docs)
        )));
    }
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(LabError::domain(
            "singular values must be finite and non-negative",
        ));
    }
    if singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(LabError::domain("singular values must be non-increasing"));
    }
    let u = stream.derive(1).orthonormal_columns(num_queries, k);
    let v = stream.derive(2).orthonormal_columns(num_docs, k);
    let logits = Matrix::from_fn(num_queries, num_docs, |i, j| {
        (0..k)
            .map(|t| u[(i, t)] * singular_values[t] * v[(j, t)])
            .sum()
    });
    let mut world = GroundTruthPosterior::from_logits(logits)?;
    world.spectrum = singular_values.to_vec();
    Ok(world)
}

/// World with Gaussian query/document features and logits `strength · X_q X_dᵀ / √F`.
///
/// Returns `(world, query_features, doc_features)`.
pub fn make_featurized_world(
    num_queries: usize,
    num_docs: usize,
    feature_dim: usize,
    strength: f64,
    stream: &RandomStream,
) -> Result<(GroundTruthPosterior, Matrix, Matrix)> {
    if feature_dim == 0 {
        return Err(LabError::domain("feature_dim must be positive"));
    }
    let queries = stream
        .derive(11)
        .gaussian_matrix(num_queries, feature_dim, 1.0);
    let docs = stream
        .derive(12)
        .gaussian_matrix(num_docs, feature_dim, 1.0);
    let mut logits = queries.matmul_transpose(&docs)?;
    logits.scale(strength / (feature_dim as f64).sqrt());
    Ok((GroundTruthPosterior::from_logits(logits)?, queries, docs))
}

/// One observed `(q, d⁺)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: usize,
    pub positive: usize,
}

/// Uniform queries, positives drawn from `P⋆(·|q)`.
pub fn sample_training_pairs(
    world: &GroundTruthPosterior,
    n: usize,
    stream: &RandomStream,
) -> Vec<TrainingPair> {
    let cdfs: Vec<Vec<f64>> = (0..world.num_queries())
        .map(|q| cumulative(world.row(q)))
        .collect();
    let mut rng = stream.rng();
    let m = world.num_queries();
    (0..n)
        .map(|_| {
            let query = rand::Rng::random_range(&mut rng, 0..m);
            let positive = sample_cdf(&cdfs[query], &mut rng);
            TrainingPair { query, positive }
        })
        .collect()
}

pub fn one_hot_features(n: usize) -> Matrix {
    Matrix::identity(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::svd;

    #[test]
    fn rank_one_world() {
        let w = make_spectral_world(6, 5, &[5.0], &RandomStream::new(1, 0)).unwrap();
        let s = svd(w.logits()).unwrap();
        assert!((s.singular_values[0] - 5.0).abs() < 1e-8);
        assert!(s.singular_values[1..].iter().all(|&x| x < 1e-8));
        // rank-1 logits: log-ratios between any two docs are proportional across queries
        let l = w.logits();
        let d0: Vec<f64> = (0..6).map(|q| l[(q, 0)] - l[(q, 1)]).collect();
        let d1: Vec<f64> = (0..6).map(|q| l[(q, 2)] - l[(q, 3)]).collect();
        let ratio = d0[0] / d1[0];
        for q in 1..6 {
            assert!((d0[q] - ratio * d1[q]).abs() < 1e-9);
        }
    }

    #[test]
    fn spectrum_round_trip() {
        for seed in 0..5 {
            let w =
                make_spectral_world(8, 8, &[3.0, 2.0, 1.0], &RandomStream::new(seed, 9)).unwrap();
            let s = svd(w.logits()).unwrap();
            let expected = [3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            for (got, want) in s.singular_values.iter().zip(expected) {
                assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let w =
            make_spectral_world(10, 30, &[9.0, 4.0, 4.0, 0.5], &RandomStream::new(3, 0)).unwrap();
        for q in 0..10 {
            let total: f64 = w.row(q).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(w.row(q).iter().all(|&p| p > 0.0 && p <= 1.0));
        }
        let r = w.restrict_to_first(7).unwrap();
        for q in 0..10 {
            assert!((r.row(q).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spectra() {
        let s = RandomStream::new(0, 0);
        assert!(make_spectral_world(2, 3, &[1.0, 1.0, 1.0], &s).is_err());
        assert!(make_spectral_world(4, 4, &[1.0, 2.0], &s).is_err());
        assert!(make_spectral_world(4, 4, &[-1.0], &s).is_err());
    }

    #[test]
    fn one_hot_posterior_pairs_hit_argmax() {
        let world = GroundTruthPosterior::from_posterior(Matrix::identity(5)).unwrap();
        let pairs = sample_training_pairs(&world, 500, &RandomStream::new(2, 2));
        assert!(pairs.iter().all(|p| p.query == p.positive));
    }

    #[test]
    fn sampling_is_deterministic() {
        let w = make_spectral_world(4, 9, &[2.0, 1.0], &RandomStream::new(8, 0)).unwrap();
        let a = sample_training_pairs(&w, 300, &RandomStream::new(8, 1));
        let b = sample_training_pairs(&w, 300, &RandomStream::new(8, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_frequencies_match_posterior() {
        let w = make_spectral_world(1, 12, &[4.0], &RandomStream::new(21, 0)).unwrap();
        let n = 200_000;
        let pairs = sample_training_pairs(&w, n, &RandomStream::new(21, 5));
        let mut counts = [0usize; 12];
        for p in &pairs {
            counts[p.positive] += 1;
        }
        for (d, &c) in counts.iter().enumerate() {
            let p = w.row(0)[d];
            let freq = c as f64 / n as f64;
            let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() <= tol.max(1e-12), "doc {d}: {freq} vs {p}");
        }
    }

    #[test]
    fn marginal_converges_in_tv() {
        let w = make_spectral_world(16, 64, &[6.0, 3.0, 2.0], &RandomStream::new(4, 0)).unwrap();
        let n = 100_000;
        let pairs = sample_training_pairs(&w, n, &RandomStream::new(4, 1));
        let mut joint = vec![0.0; 64];
        let mut expected = vec![0.0; 64];
        for p in &pairs {
            joint[p.positive] += 1.0 / n as f64;
        }
        for q in 0..16 {
            for (e, x) in expected.iter_mut().zip(w.row(q)) {
                *e += x / 16.0;
            }
        }
        let tv: f64 = 0.5
            * joint
                .iter()
                .zip(&expected)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv = {tv}");
    }
}
