use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};

/// Identifies one reproducible random sequence.
///
/// Backed by ChaCha8, a counter-based generator with a native stream
/// parameter: the root seed keys the cipher and `stream_id` selects the
/// stream, so trials partitioned across workers never share a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub root_seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        Self {
            root_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream addressed by `label`; same parent and label always give the same child.
    pub fn derive(&self, label: u64) -> RandomStream {
        RandomStream {
            root_seed: self.root_seed,
            stream_id: splitmix64(
                self.stream_id ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)),
            ),
        }
    }

    pub fn gaussian_matrix(&self, rows: usize, cols: usize, std: f64) -> Matrix {
        let mut rng = self.rng();
        Matrix::from_fn(rows, cols, |_, _| std * gaussian(&mut rng))
    }

    /// `rows × cols` matrix with orthonormal columns (`cols ≤ rows`), via Gram–Schmidt on a Gaussian draw.
    pub fn orthonormal_columns(&self, rows: usize, cols: usize) -> Matrix {
        assert!(cols <= rows, "need cols <= rows for orthonormal columns");
        let mut rng = self.rng();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
        while basis.len() < cols {
            let mut w: Vec<f64> = (0..rows).map(|_| gaussian(&mut rng)).collect();
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(b, &w);
                    w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= proj * bi);
                }
            }
            let len = dot(&w, &w).sqrt();
            // a near-degenerate draw is simply redrawn
            if len > 1e-6 {
                w.iter_mut().for_each(|x| *x /= len);
                basis.push(w);
            }
        }
        Matrix::from_fn(rows, cols, |i, j| basis[j][i])
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[inline]
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Inverse-CDF draw from a cumulative table whose last entry is the total mass.
pub fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("empty cdf");
    let u = rng.random::<f64>() * total;
    let idx = cdf.partition_point(|&c| c <= u);
    // skip zero-mass entries at the top edge
    idx.min(cdf.len() - 1)
}

pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let a: Vec<u64> = {
            let mut r = RandomStream::new(42, 3).rng();
            (0..8).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RandomStream::new(42, 3).rng();
            (0..8).map(|_| r.random()).collect()
        };
        let c: Vec<u64> = {
            let mut r = RandomStream::new(42, 4).rng();
            (0..8).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(
            RandomStream::new(1, 0).derive(1),
            RandomStream::new(1, 0).derive(2)
        );
    }

    #[test]
    fn orthonormal_columns_are_orthonormal() {
        let q = RandomStream::new(5, 1).orthonormal_columns(9, 4);
        let g = q.transpose().matmul(&q).unwrap();
        assert!(g.sub(&Matrix::identity(4)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn cdf_sampling_skips_zero_mass() {
        let cdf = cumulative(&[0.0, 1.0, 0.0]);
        let mut rng = RandomStream::new(0, 0).rng();
        for _ in 0..1000 {
            assert_eq!(sample_cdf(&cdf, &mut rng), 1);
        }
    }
}
