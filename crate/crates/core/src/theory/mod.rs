//! Monte Carlo and exact checks of the partition-function gap, its tail bound, the
//! low-rank limit of bilinear scoring and the cross-entropy decomposition.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{rank_by_score, NegativeKind, NegativePolicy};
use crate::error::{LabError, Result};
use crate::numerics::{
    batch_means, cumulative, gaussian, logsumexp, logsumexp_unchecked, sample_cdf, svd, Matrix,
    RandomStream,
};
use crate::world::GroundTruthPosterior;

pub use crate::numerics::numerical_rank;

/// Batches used for batch-means standard errors.
pub const SE_BATCHES: usize = 100;
/// Default relative tolerance for [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-8;
/// Monte Carlo trials handled by one worker stream.
const CHUNK: usize = 2048;

/// `(log Z, log Z_K)` for one query's scores at temperature `τ`; `candidates` is a multiset.
pub fn partition_functions(scores: &[f64], tau: f64, candidates: &[usize]) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(LabError::domain("candidate set is empty"));
    }
    if !(tau > 0.0) {
        return Err(LabError::domain("temperature must be positive"));
    }
    if let Some(&c) = candidates.iter().find(|&&c| c >= scores.len()) {
        return Err(LabError::domain(format!(
            "candidate {c} outside 0..{}",
            scores.len()
        )));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let batch: Vec<f64> = candidates.iter().map(|&c| scaled[c]).collect();
    Ok((logsumexp(&scaled)?, logsumexp(&batch)?))
}

/// Static negative proposal `π(·|q)` for one query: uniform, or a mixture putting mass `ρ`
/// uniformly on the `P` highest-scoring documents.
pub fn proposal_distribution(scores: &[f64], policy: &NegativePolicy) -> Result<Vec<f64>> {
    policy.validate()?;
    let n = scores.len();
    if n == 0 {
        return Err(LabError::domain("no documents"));
    }
    let mut p = vec![1.0 / n as f64; n];
    if policy.kind == NegativeKind::HardMixture {
        let rho = policy.effective_ratio();
        let pool = policy.hard_pool_size.clamp(1, n);
        p.iter_mut().for_each(|x| *x *= 1.0 - rho);
        for d in rank_by_score(scores).into_iter().take(pool) {
            p[d] += rho / pool as f64;
        }
    }
    Ok(p)
}

/// Row-wise [`proposal_distribution`].
pub fn proposal_matrix(scores: &Matrix, policy: &NegativePolicy) -> Result<Matrix> {
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for q in 0..scores.rows() {
        out.row_mut(q)
            .copy_from_slice(&proposal_distribution(scores.row(q), policy)?);
    }
    Ok(out)
}

/// Exact `δ(q) = log E_π[e^{S/τ}] − log E_μ[e^{S/τ}]` with `μ` uniform.
pub fn exact_delta(scores: &[f64], tau: f64, proposal: &[f64]) -> Result<f64> {
    if scores.len() != proposal.len() || scores.is_empty() {
        return Err(LabError::domain(
            "scores and proposal must share a non-empty support",
        ));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let weighted: Vec<f64> = scaled
        .iter()
        .zip(proposal)
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, p)| s + p.ln())
        .collect();
    Ok(logsumexp(&weighted)? - (logsumexp(&scaled)? - (scores.len() as f64).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub per_query: Vec<f64>,
    /// Delta-method standard error of each `δ(q)`.
    pub standard_errors: Vec<f64>,
    pub mean: f64,
}

/// `δ(q)` per query with the `μ` term exact and the `π` term averaged over `samples` draws.
pub fn estimate_delta(
    scores: &Matrix,
    tau: f64,
    proposals: &Matrix,
    samples: usize,
    stream: &RandomStream,
) -> Result<DeltaEstimate> {
    if scores.shape() != proposals.shape() {
        return Err(LabError::domain("scores and proposals differ in shape"));
    }
    if samples == 0 || !(tau > 0.0) {
        return Err(LabError::domain("need samples >= 1 and tau > 0"));
    }
    let n = scores.cols() as f64;
    let rows: Vec<(f64, f64)> = (0..scores.rows())
        .into_par_iter()
        .map(|q| {
            let scaled: Vec<f64> = scores.row(q).iter().map(|s| s / tau).collect();
            let shift = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let cdf = cumulative(proposals.row(q));
            let mut rng = stream.derive(q as u64).rng();
            let draws: Vec<f64> = (0..samples)
                .map(|_| (scaled[sample_cdf(&cdf, &mut rng)] - shift).exp())
                .collect();
            let (mean, se) = batch_means(&draws, SE_BATCHES);
            let log_mu = logsumexp_unchecked(&scaled) - n.ln();
            (
                mean.ln() + shift - log_mu,
                if se.is_finite() { se / mean } else { 0.0 },
            )
        })
        .collect();
    let per_query: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mean = per_query.iter().sum::<f64>() / per_query.len().max(1) as f64;
    Ok(DeltaEstimate {
        standard_errors: rows.iter().map(|r| r.1).collect(),
        per_query,
        mean,
    })
}

/// Monte Carlo estimate of the calibration gap against both orientations of its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub num_docs: usize,
    pub num_candidates: usize,
    pub trials: usize,
    /// `E[log Z − log Z_K]`.
    pub gap: f64,
    /// Batch-means standard error of `gap`.
    pub standard_error: f64,
    pub mean_delta: f64,
    /// Monte Carlo standard error of `mean_delta`.
    pub delta_standard_error: f64,
    /// Standard error of either slack: both Monte Carlo errors combined.
    pub slack_standard_error: f64,
    /// `E[log Z_K − log Z] − (log(K/N) − E[δ])`; non-negative when the lower bound holds.
    pub lower_slack: f64,
    pub lower_bound: f64,
    /// `log(N/K) − E[δ]`, the same bound with the log ratio flipped.
    pub flipped_bound: f64,
    /// `gap − flipped_bound`.
    pub flipped_slack: f64,
}

impl GapReport {
    /// The lower bound holds within `z` standard errors.
    pub fn holds(&self, z: f64) -> bool {
        self.lower_slack >= -z * self.slack_standard_error - 1e-12
    }
}

/// Settings shared by the gap estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub num_candidates: usize,
    pub trials: usize,
    /// Proposal draws per query for `δ(q)`.
    pub delta_samples: usize,
}

/// Draws `q` uniformly, `d⁺ ~ P⋆(·|q)` and `K − 1` i.i.d. negatives from `π(·|q)`; averages
/// `log Z(q) − log Z_K(q)` over the candidate multiset `{d⁺} ∪ 𝒩`.
pub fn estimate_gap(
    world: &GroundTruthPosterior,
    scores: &Matrix,
    tau: f64,
    proposals: &Matrix,
    config: &GapConfig,
    stream: &RandomStream,
) -> Result<GapReport> {
    let k = config.num_candidates;
    if k < 2 {
        return Err(LabError::domain("K must be at least 2"));
    }
    if config.trials == 0 {
        return Err(LabError::domain("trials must be positive"));
    }
    if !(tau > 0.0) {
        return Err(LabError::domain("temperature must be positive"));
    }
    let (m, n) = scores.shape();
    if world.num_queries() != m || world.num_docs() != n || proposals.shape() != (m, n) {
        return Err(LabError::domain(
            "world, scores and proposals must share an m x N shape",
        ));
    }
    let scaled: Vec<Vec<f64>> = (0..m)
        .map(|q| scores.row(q).iter().map(|s| s / tau).collect())
        .collect();
    let log_z: Vec<f64> = scaled.iter().map(|r| logsumexp_unchecked(r)).collect();
    let pos_cdf: Vec<Vec<f64>> = (0..m).map(|q| cumulative(world.row(q))).collect();
    let neg_cdf: Vec<Vec<f64>> = (0..m).map(|q| cumulative(proposals.row(q))).collect();
    let chunks = config.trials.div_ceil(CHUNK);
    let samples: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.derive(c as u64).rng();
            let count = CHUNK.min(config.trials - c * CHUNK);
            let mut batch = vec![0.0; k];
            (0..count)
                .map(|_| {
                    let q = rng.random_range(0..m);
                    batch[0] = scaled[q][sample_cdf(&pos_cdf[q], &mut rng)];
                    for slot in batch.iter_mut().skip(1) {
                        *slot = scaled[q][sample_cdf(&neg_cdf[q], &mut rng)];
                    }
                    log_z[q] - logsumexp_unchecked(&batch)
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>()
        .concat();
    let (gap, se) = batch_means(&samples, SE_BATCHES);
    let standard_error = if se.is_finite() { se } else { 0.0 };
    let delta = estimate_delta(
        scores,
        tau,
        proposals,
        config.delta_samples,
        &stream.derive(u64::MAX),
    )?;
    let delta_se = delta
        .standard_errors
        .iter()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
        / m as f64;
    let log_ratio = (k as f64 / n as f64).ln();
    let lower_bound = log_ratio - delta.mean;
    let flipped_bound = -log_ratio - delta.mean;
    Ok(GapReport {
        num_docs: n,
        num_candidates: k,
        trials: config.trials,
        gap,
        standard_error,
        mean_delta: delta.mean,
        delta_standard_error: delta_se,
        slack_standard_error: standard_error.hypot(delta_se),
        lower_slack: -gap - lower_bound,
        lower_bound,
        flipped_bound,
        flipped_slack: gap - flipped_bound,
    })
}

/// Empirical lower-tail frequency of the in-batch mean against its Bernstein bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub num_samples: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub frequency: f64,
    pub bound: f64,
    /// `√(bound·(1 − bound)/trials)`.
    pub binomial_se: f64,
    /// `σ_π / μ_π` from the independent moment sample.
    pub relative_std: f64,
}

impl TailReport {
    pub fn passes(&self) -> bool {
        self.frequency <= self.bound + 3.0 * self.binomial_se
    }
}

/// `exp(−Kε² / (2(σ²/μ² + ε/3)))`.
pub fn bernstein_bound(k: usize, epsilon: f64, relative_variance: f64) -> f64 {
    (-(k as f64) * epsilon * epsilon / (2.0 * (relative_variance + epsilon / 3.0))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub num_samples: usize,
    pub epsilon: f64,
    pub trials: usize,
    /// Size of the independent sample estimating `μ_π` and `σ_π`.
    pub moment_samples: usize,
}

/// Frequency of `{log X̄_K ≤ log μ_π − ε}` with `X = e^{S(q,d)/τ}`, `d ~ π`, for one query.
pub fn check_bernstein_tail(
    scores: &[f64],
    tau: f64,
    proposal: &[f64],
    config: &TailConfig,
    stream: &RandomStream,
) -> Result<TailReport> {
    let eps = config.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabError::domain("epsilon must lie in (0, 1)"));
    }
    if config.num_samples == 0 || config.trials == 0 || config.moment_samples < 2 {
        return Err(LabError::domain(
            "need K >= 1, trials >= 1 and at least two moment samples",
        ));
    }
    if scores.len() != proposal.len() || scores.is_empty() {
        return Err(LabError::domain(
            "scores and proposal must share a non-empty support",
        ));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let shift = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = scaled.iter().map(|s| (s - shift).exp()).collect();
    let cdf = cumulative(proposal);

    let mut rng = stream.derive(0).rng();
    let moments: Vec<f64> = (0..config.moment_samples)
        .map(|_| values[sample_cdf(&cdf, &mut rng)])
        .collect();
    let mu = moments.iter().sum::<f64>() / moments.len() as f64;
    let var = moments.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (moments.len() - 1) as f64;
    let threshold = mu.ln() - eps;

    let k = config.num_samples;
    let chunks = config.trials.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.derive(1 + c as u64).rng();
            let count = CHUNK.min(config.trials - c * CHUNK);
            (0..count)
                .filter(|_| {
                    let mean = (0..k)
                        .map(|_| values[sample_cdf(&cdf, &mut rng)])
                        .sum::<f64>()
                        / k as f64;
                    mean.ln() <= threshold
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let bound = bernstein_bound(k, eps, var / (mu * mu));
    Ok(TailReport {
        num_samples: k,
        epsilon: eps,
        trials: config.trials,
        frequency: hits as f64 / config.trials as f64,
        bound,
        binomial_se: (bound * (1.0 - bound) / config.trials as f64).sqrt(),
        relative_std: var.sqrt() / mu,
    })
}

/// `Σ_{i>r} σᵢ(S)²`.
pub fn spectral_tail(s: &Matrix, r: usize) -> Result<f64> {
    let sv = svd(s)?.singular_values;
    Ok(sv.iter().skip(r).map(|x| x * x).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationConfig {
    pub max_iters: usize,
    /// Step size as a fraction of `1/σ_max(S)`.
    pub step_scale: f64,
    /// Initial entries are `N(0, (init_scale·√σ_max)²)`.
    pub init_scale: f64,
    /// Stop once an iteration improves the loss by less than this relative amount.
    pub tol: f64,
}

impl Default for FactorizationConfig {
    fn default() -> Self {
        FactorizationConfig {
            max_iters: 40_000,
            step_scale: 0.2,
            init_scale: 0.01,
            tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EckartYoungReport {
    pub rank: usize,
    pub tail: f64,
    pub trained_best: f64,
    /// `(trained_best − tail) / max(tail, 1e-12)`.
    pub relative_gap: f64,
    pub iterations: usize,
    /// `trained_best ≥ tail − 1e-6`.
    pub optimality_holds: bool,
}

/// Compares the SVD tail with a rank-`r` factorization `QDᵀ` fit by full-batch gradient descent.
pub fn eckart_young_check(
    s_star: &Matrix,
    r: usize,
    config: &FactorizationConfig,
    stream: &RandomStream,
) -> Result<EckartYoungReport> {
    let (m, n) = s_star.shape();
    if r == 0 || r > m.min(n) {
        return Err(LabError::domain(format!(
            "rank {r} outside 1..={}",
            m.min(n)
        )));
    }
    let sv = svd(s_star)?.singular_values;
    let tail: f64 = sv.iter().skip(r).map(|x| x * x).sum();
    let sigma_max = sv[0];
    if sigma_max == 0.0 {
        return Ok(EckartYoungReport {
            rank: r,
            tail,
            trained_best: 0.0,
            relative_gap: 0.0,
            iterations: 0,
            optimality_holds: true,
        });
    }
    let lr = config.step_scale / sigma_max;
    let std = config.init_scale * sigma_max.sqrt();
    let mut rng = stream.rng();
    let mut q = Matrix::from_fn(m, r, |_, _| std * gaussian(&mut rng));
    let mut d = Matrix::from_fn(n, r, |_, _| std * gaussian(&mut rng));
    let mut loss = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..config.max_iters {
        iterations = it + 1;
        let resid = q.matmul_transpose(&d)?.sub(s_star)?;
        let current = resid.frobenius_norm_sq();
        if !current.is_finite() {
            return Err(LabError::Diverged {
                step: it,
                loss: current,
            });
        }
        let improvement = loss - current;
        loss = current;
        if improvement.is_finite()
            && improvement >= 0.0
            && improvement <= config.tol * current.max(1e-300)
        {
            break;
        }
        let gq = resid.matmul(&d)?;
        let gd = resid.transpose().matmul(&q)?;
        for (x, g) in q.as_mut_slice().iter_mut().zip(gq.as_slice()) {
            *x -= 2.0 * lr * g;
        }
        for (x, g) in d.as_mut_slice().iter_mut().zip(gd.as_slice()) {
            *x -= 2.0 * lr * g;
        }
    }
    let trained_best = q.matmul_transpose(&d)?.sub(s_star)?.frobenius_norm_sq();
    Ok(EckartYoungReport {
        rank: r,
        tail,
        trained_best,
        relative_gap: (trained_best - tail) / tail.max(1e-12),
        iterations,
        optimality_holds: trained_best >= tail - 1e-6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeKl {
    pub cross_entropy: f64,
    pub entropy: f64,
    pub kl: f64,
    /// `P_Θ` assigns zero mass where `P⋆` does not; CE and KL are `+∞`.
    pub infinite: bool,
}

impl CeKl {
    /// `|CE − H − KL|`, zero when infinite.
    pub fn residual(&self) -> f64 {
        if self.infinite {
            0.0
        } else {
            (self.cross_entropy - self.entropy - self.kl).abs()
        }
    }
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(LabError::domain(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LabError::domain(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// `CE(P⋆, P_Θ)`, `H(P⋆)` and `KL(P⋆ ‖ P_Θ)`, each summed independently.
pub fn ce_kl_decomposition(p_star: &[f64], p_theta: &[f64]) -> Result<CeKl> {
    if p_star.len() != p_theta.len() || p_star.is_empty() {
        return Err(LabError::domain(
            "distributions must share a non-empty support",
        ));
    }
    check_distribution(p_star, "P*")?;
    check_distribution(p_theta, "P_theta")?;
    let support = || p_star.iter().zip(p_theta).filter(|(p, _)| **p > 0.0);
    let entropy = neumaier(support().map(|(p, _)| -p * p.ln()));
    if support().any(|(_, q)| *q == 0.0) {
        return Ok(CeKl {
            cross_entropy: f64::INFINITY,
            entropy,
            kl: f64::INFINITY,
            infinite: true,
        });
    }
    Ok(CeKl {
        cross_entropy: neumaier(support().map(|(p, q)| -p * q.ln())),
        entropy,
        kl: neumaier(support().map(|(p, q)| p * (p.ln() - q.ln()))),
        infinite: false,
    })
}

#[cfg(test)]
mod tests;
