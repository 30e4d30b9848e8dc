//! Residual quantization codebooks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{Matrix, RandomStream};

const EARLY_STOP: f64 = 1e-9;

/// `L` stages of `B` codewords each. Stage `s` quantizes the residual left by stages `< s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    stages: Vec<Matrix>,
    /// Cumulative training MSE after each stage.
    stage_mse: Vec<f64>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub tokens: Vec<u32>,
    pub residual_norm: f64,
}

impl Codebook {
    pub fn from_stages(stages: Vec<Matrix>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| LabError::domain("codebook needs at least one stage"))?;
        let (b, f) = first.shape();
        if b == 0 {
            return Err(LabError::domain("codebook needs at least one codeword"));
        }
        if stages.iter().any(|s| s.shape() != (b, f) || !s.is_finite()) {
            return Err(LabError::domain(
                "codebook stages must share a finite B x F shape",
            ));
        }
        Ok(Codebook {
            stages,
            stage_mse: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn base(&self) -> usize {
        self.stages[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].cols()
    }

    pub fn stage(&self, s: usize) -> &Matrix {
        &self.stages[s]
    }

    pub fn stage_mse(&self) -> &[f64] {
        &self.stage_mse
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Greedy nearest codeword per stage on the running residual, ties to the lowest index.
    pub fn encode(&self, vector: &[f64]) -> Result<Encoded> {
        if vector.len() != self.dim() {
            return Err(LabError::domain(format!(
                "rq_encode: vector has dimension {}, codebook has {}",
                vector.len(),
                self.dim()
            )));
        }
        let mut residual = vector.to_vec();
        let mut tokens = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let t = nearest(stage, &residual);
            for (r, c) in residual.iter_mut().zip(stage.row(t)) {
                *r -= c;
            }
            tokens.push(t as u32);
        }
        let residual_norm = crate::numerics::norm(&residual);
        Ok(Encoded {
            tokens,
            residual_norm,
        })
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.len() != self.stages.len() {
            return Err(LabError::domain(format!(
                "rq_decode: expected {} tokens, got {}",
                self.stages.len(),
                tokens.len()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        for (stage, &t) in self.stages.iter().zip(tokens) {
            if t as usize >= stage.rows() {
                return Err(LabError::domain(format!(
                    "rq_decode: token {t} outside [0, {})",
                    stage.rows()
                )));
            }
            for (o, c) in out.iter_mut().zip(stage.row(t as usize)) {
                *o += c;
            }
        }
        Ok(out)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        let d = sq_dist(centroids.row(c), v);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Fits an `L`-stage, `B`-codeword residual quantizer with k-means++ seeding and Lloyd
/// iterations capped at `iters` per stage.
pub fn rq_train(
    vectors: &Matrix,
    stages: usize,
    base: usize,
    iters: usize,
    stream: &RandomStream,
) -> Result<Codebook> {
    let (n, f) = vectors.shape();
    if n == 0 || stages == 0 || base == 0 {
        return Err(LabError::domain("rq_train needs N, L, B >= 1"));
    }
    if !vectors.is_finite() {
        return Err(LabError::domain("rq_train: non-finite input vectors"));
    }
    let mut residuals = vectors.clone();
    let mut codebooks = Vec::with_capacity(stages);
    let mut stage_mse = Vec::with_capacity(stages);
    let mut warnings = Vec::new();
    for s in 0..stages {
        let mut rng = stream.derive(s as u64).rng();
        let (mut centroids, seeded) = kmeans_pp(&residuals, base, &mut rng);
        if seeded < base {
            warnings.push(format!(
                "stage {s}: only {seeded} distinct residuals for B = {base}; {} centroids fixed at zero",
                base - seeded
            ));
        }
        let mut assign = vec![0usize; n];
        let mut prev = f64::INFINITY;
        for _ in 0..iters.max(1) {
            let mut objective = 0.0;
            for (i, a) in assign.iter_mut().enumerate() {
                *a = nearest(&centroids, residuals.row(i));
                objective += sq_dist(centroids.row(*a), residuals.row(i));
            }
            let mut sums = Matrix::zeros(base, f);
            let mut counts = vec![0usize; base];
            for (i, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                for (t, v) in sums.row_mut(a).iter_mut().zip(residuals.row(i)) {
                    *t += v;
                }
            }
            for (c, &count) in counts.iter().enumerate() {
                if count > 0 {
                    let k = count as f64;
                    for (dst, src) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                        *dst = src / k;
                    }
                }
            }
            let improvement = prev - objective;
            if prev.is_finite() && improvement <= EARLY_STOP * prev.max(f64::MIN_POSITIVE) {
                break;
            }
            prev = objective;
        }
        let mut total = 0.0;
        for i in 0..n {
            let c = nearest(&centroids, residuals.row(i));
            let code = centroids.row(c).to_vec();
            for (r, v) in residuals.row_mut(i).iter_mut().zip(&code) {
                *r -= v;
            }
            total += residuals.row(i).iter().map(|x| x * x).sum::<f64>();
        }
        stage_mse.push(total / n as f64);
        codebooks.push(centroids);
    }
    Ok(Codebook {
        stages: codebooks,
        stage_mse,
        warnings,
    })
}

/// Returns the centroids and how many were seeded from data (the rest stay at zero).
fn kmeans_pp<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> (Matrix, usize) {
    let (n, f) = points.shape();
    let mut centroids = Matrix::zeros(k, f);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            return (centroids, c);
        }
        let cdf = crate::numerics::cumulative(&dist);
        let pick = crate::numerics::sample_cdf(&cdf, rng);
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    (centroids, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_centroid_per_point_is_lossless() {
        let x = RandomStream::new(3, 0).gaussian_matrix(12, 4, 1.0);
        let cb = rq_train(&x, 1, 12, 50, &RandomStream::new(3, 1)).unwrap();
        assert!(cb.warnings().is_empty());
        for i in 0..12 {
            let e = cb.encode(x.row(i)).unwrap();
            assert!(e.residual_norm < 1e-12);
        }
        assert!(cb.stage_mse()[0] < 1e-24);
    }

    #[test]
    fn stage_mse_is_non_increasing() {
        for seed in 0..8 {
            let x = RandomStream::new(seed, 0).gaussian_matrix(64, 6, 1.0);
            let cb = rq_train(&x, 5, 4, 50, &RandomStream::new(seed, 1)).unwrap();
            // recompute the cumulative error stage by stage with truncated codebooks
            let mut prev = x.frobenius_norm_sq() / 64.0;
            for s in 1..=5 {
                let partial =
                    Codebook::from_stages((0..s).map(|t| cb.stage(t).clone()).collect()).unwrap();
                let mse: f64 = (0..64)
                    .map(|i| partial.encode(x.row(i)).unwrap().residual_norm.powi(2))
                    .sum::<f64>()
                    / 64.0;
                assert!(mse <= prev + 1e-12, "seed {seed} stage {s}: {mse} > {prev}");
                assert!((mse - cb.stage_mse()[s - 1]).abs() < 1e-9);
                prev = mse;
            }
        }
    }

    #[test]
    fn surplus_centroids_are_flagged() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let cb = rq_train(&x, 1, 5, 10, &RandomStream::new(0, 0)).unwrap();
        assert_eq!(cb.warnings().len(), 1);
        assert!(cb.stage(0).row(4).iter().all(|&v| v == 0.0));
        assert!(cb.stage_mse()[0] < 1e-24);
    }

    #[test]
    fn decode_error_matches_residual() {
        let x = RandomStream::new(9, 0).gaussian_matrix(40, 5, 1.0);
        let cb = rq_train(&x, 3, 4, 50, &RandomStream::new(9, 1)).unwrap();
        for i in 0..40 {
            let e = cb.encode(x.row(i)).unwrap();
            let back = cb.decode(&e.tokens).unwrap();
            let err = crate::numerics::norm(
                &back
                    .iter()
                    .zip(x.row(i))
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            assert!((err - e.residual_norm).abs() < 1e-10);
        }
        assert!(cb.decode(&[0, 4, 0]).is_err());
        assert!(cb.decode(&[0, 0]).is_err());
        assert!(cb.encode(&[0.0; 4]).is_err());
    }

    #[test]
    fn exact_codeword_leaves_zero_residual() {
        let s0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let cb = Codebook::from_stages(vec![s0, Matrix::zeros(2, 2)]).unwrap();
        let e = cb.encode(&[-3.0, 0.5]).unwrap();
        assert_eq!(e.tokens, vec![1, 0]);
        assert_eq!(e.residual_norm, 0.0);
    }

    #[test]
    fn equidistant_codewords_pick_lower_index() {
        let s0 = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cb = Codebook::from_stages(vec![s0]).unwrap();
        assert_eq!(cb.encode(&[0.0, 0.0]).unwrap().tokens, vec![0]);
        assert_eq!(cb.encode(&[0.0, -0.5]).unwrap().tokens, vec![0]);
    }

    #[test]
    fn training_is_deterministic() {
        let x = RandomStream::new(1, 0).gaussian_matrix(30, 3, 1.0);
        let a = rq_train(&x, 2, 4, 50, &RandomStream::new(5, 0)).unwrap();
        let b = rq_train(&x, 2, 4, 50, &RandomStream::new(5, 0)).unwrap();
        assert_eq!(a.stage(1), b.stage(1));
    }
}
