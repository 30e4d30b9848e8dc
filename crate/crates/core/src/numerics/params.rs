use super::matrix::{axpy, Matrix};

/// Gradient contribution for one row of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlock {
    pub block: usize,
    pub row: usize,
    pub values: Vec<f64>,
}

/// Row-sparse gradient over a model's parameter blocks. Entries may repeat; they add.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<GradBlock>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, block: usize, row: usize, values: Vec<f64>) {
        self.entries.push(GradBlock { block, row, values });
    }

    pub fn entries(&self) -> &[GradBlock] {
        &self.entries
    }

    pub fn extend(&mut self, other: Gradients) {
        self.entries.extend(other.entries);
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.values.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A model whose trainable state is an ordered list of matrices.
pub trait Parameterized {
    fn num_blocks(&self) -> usize;
    fn block(&self, index: usize) -> &Matrix;
    fn block_mut(&mut self, index: usize) -> &mut Matrix;

    fn num_parameters(&self) -> usize {
        (0..self.num_blocks())
            .map(|b| {
                let (r, c) = self.block(b).shape();
                r * c
            })
            .sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for b in 0..self.num_blocks() {
            out.extend_from_slice(self.block(b).as_slice());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_parameters(), "flat parameter length");
        let mut offset = 0;
        for b in 0..self.num_blocks() {
            let dst = self.block_mut(b).as_mut_slice();
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
    }

    /// Dense gradient in `flatten` layout.
    fn densify(&self, grads: &Gradients) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.num_blocks());
        let mut total = 0;
        for b in 0..self.num_blocks() {
            offsets.push(total);
            let (r, c) = self.block(b).shape();
            total += r * c;
        }
        let mut dense = vec![0.0; total];
        for e in grads.entries() {
            let cols = self.block(e.block).cols();
            let start = offsets[e.block] + e.row * cols;
            axpy(1.0, &e.values, &mut dense[start..start + cols]);
        }
        dense
    }

    fn apply_sgd(&mut self, grads: &Gradients, learning_rate: f64) {
        if learning_rate == 0.0 {
            return;
        }
        for e in grads.entries() {
            axpy(
                -learning_rate,
                &e.values,
                self.block_mut(e.block).row_mut(e.row),
            );
        }
    }

    fn parameters_finite(&self) -> bool {
        (0..self.num_blocks()).all(|b| self.block(b).is_finite())
    }
}
