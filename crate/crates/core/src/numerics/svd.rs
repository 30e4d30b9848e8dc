//! One-sided (Hestenes) Jacobi SVD.
//!
//! Orthogonalizes the columns of a working copy of `A` with plane rotations,
//! accumulating the rotations into `V`. Column norms become the singular
//! values and normalized columns become `U`. Accurate to a few ulps relative
//! to `σ_max` for the small dense matrices used in this crate.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{LabError, Result};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;
/// Singular values below `σ_max * NULL_TOL` get a completed (not normalized) left vector.
const NULL_TOL: f64 = 1e-11;

/// Thin SVD `A = U · diag(σ) · Vᵀ` with `k = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdResult {
    pub left_vectors: Matrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let (m, k) = self.left_vectors.shape();
        let n = self.right_vectors.rows();
        Matrix::from_fn(m, n, |i, j| {
            (0..k)
                .map(|t| {
                    self.left_vectors[(i, t)] * self.singular_values[t] * self.right_vectors[(j, t)]
                })
                .sum()
        })
    }

    /// Best rank-`r` approximation (truncated SVD).
    pub fn truncate(&self, r: usize) -> Matrix {
        let (m, k) = self.left_vectors.shape();
        let n = self.right_vectors.rows();
        let r = r.min(k);
        Matrix::from_fn(m, n, |i, j| {
            (0..r)
                .map(|t| {
                    self.left_vectors[(i, t)] * self.singular_values[t] * self.right_vectors[(j, t)]
                })
                .sum()
        })
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(LabError::domain("svd: non-finite input"));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(SvdResult {
            left_vectors: Matrix::zeros(m, 0),
            singular_values: Vec::new(),
            right_vectors: Matrix::zeros(n, 0),
        });
    }
    if m < n {
        let t = jacobi_tall(&a.transpose());
        return Ok(SvdResult {
            left_vectors: t.right_vectors,
            singular_values: t.singular_values,
            right_vectors: t.left_vectors,
        });
    }
    Ok(jacobi_tall(a))
}

/// Requires `rows >= cols`.
fn jacobi_tall(a: &Matrix) -> SvdResult {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    for &j in &order {
        let s = norms[j];
        singular_values.push(s);
        if sigma_max > 0.0 && s > sigma_max * NULL_TOL {
            u_cols.push(Some(cols[j].iter().map(|x| x / s).collect()));
        } else {
            u_cols.push(None);
        }
    }
    let u_cols = complete_orthonormal(u_cols, m);

    let left_vectors = Matrix::from_fn(m, n, |i, t| u_cols[t][i]);
    let right_vectors = Matrix::from_fn(n, n, |i, t| v[order[t]][i]);
    SvdResult {
        left_vectors,
        singular_values,
        right_vectors,
    }
}

fn rotate(vecs: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = vecs.split_at_mut(q);
    let (vp, vq) = (&mut head[p], &mut tail[0]);
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthogonalizes the `Some` slots in order, demoting any that collapse, then fills
/// `None` slots with unit vectors orthogonal to every other slot.
fn complete_orthonormal(slots: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let slots: Vec<Option<Vec<f64>>> = slots
        .into_iter()
        .map(|slot| {
            slot.and_then(|u| {
                let w = orthonormalize(u, &basis)?;
                basis.push(w.clone());
                Some(w)
            })
        })
        .collect();
    slots
        .into_iter()
        .map(|slot| match slot {
            Some(u) => u,
            None => {
                // the best-aligned standard basis vector keeps at least (dim - |basis|) / dim
                let w = (0..dim)
                    .map(|i| {
                        let mut e = vec![0.0; dim];
                        e[i] = 1.0;
                        residual(e, &basis)
                    })
                    .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
                    .expect("dim > basis size");
                let len = dot(&w, &w).sqrt();
                let w: Vec<f64> = w.iter().map(|x| x / len).collect();
                basis.push(w.clone());
                w
            }
        })
        .collect()
}

fn residual(mut w: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(b, &w);
            w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= proj * bi);
        }
    }
    w
}

/// `None` if less than half the norm survives projection off `basis`.
fn orthonormalize(w: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = dot(&w, &w).sqrt();
    let w = residual(w, basis);
    let len = dot(&w, &w).sqrt();
    (len > 0.5 * start).then(|| w.iter().map(|x| x / len).collect())
}

/// Number of singular values strictly above `tol · σ_max`.
pub fn numerical_rank(a: &Matrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(LabError::domain("numerical_rank: tol must be positive"));
    }
    let s = svd(a)?;
    let sigma_max = s.singular_values.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Ok(0);
    }
    Ok(s.singular_values
        .iter()
        .filter(|&&x| x > tol * sigma_max)
        .count())
}
