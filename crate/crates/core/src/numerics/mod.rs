//! Dense linear algebra, stable log-domain reductions, seeded randomness and
//! finite-difference gradient checking.

mod matrix;
mod params;
mod random;
mod svd;

pub use matrix::{axpy, dot, norm, Matrix};
pub use params::{GradBlock, Gradients, Parameterized};
pub use random::{cumulative, gaussian, sample_cdf, splitmix64, RandomStream};
pub use svd::{numerical_rank, svd, SvdResult};

use crate::error::{LabError, Result};

/// `log Σ exp(vᵢ)` by max-shift.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(LabError::domain("logsumexp of an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LabError::domain("logsumexp of non-finite values"));
    }
    Ok(logsumexp_unchecked(values))
}

/// Max-shifted log-sum-exp for callers that already validated their input.
pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp_unchecked(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp_unchecked(values);
    values.iter().map(|v| v - lse).collect()
}

/// Central-difference gradient: `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` per component.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor)`; the comparison used for gradient checks.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}

/// Mean and batch-means standard error of `samples` split into `batches` contiguous batches.
pub fn batch_means(samples: &[f64], batches: usize) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let batches = batches.min(n).max(1);
    if batches < 2 {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            samples[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    (mean, standard_error_of_means(&means))
}

/// Standard error of the grand mean given equal-weight batch means.
pub fn standard_error_of_means(means: &[f64]) -> f64 {
    let b = means.len() as f64;
    let grand = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logsumexp_examples() {
        assert_eq!(logsumexp(&[5.0]).unwrap(), 5.0);
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(
            (logsumexp(&[1000.0, 1000.0]).unwrap() - (1000.0 + std::f64::consts::LN_2)).abs()
                < 1e-9
        );
        assert!(logsumexp(&[1e300, -1e300]).unwrap().is_finite());
        assert!(matches!(logsumexp(&[]), Err(LabError::Domain(_))));
        assert!(logsumexp(&[f64::NAN]).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
        let g = finite_diff_grad(|x| logsumexp(x).unwrap(), &[0.0, 0.0], 1e-5);
        assert!((g[0] - 0.5).abs() < 1e-6 && (g[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn batch_means_of_constant_has_zero_error() {
        let (m, se) = batch_means(&[2.0; 1000], 100);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    proptest! {
        #[test]
        fn logsumexp_sandwich(v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let lse = logsumexp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-9 * max.abs().max(1.0));
        }
    }
}
