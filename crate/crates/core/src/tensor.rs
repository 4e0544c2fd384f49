//! Minimal dense tensors (row-major `f64`) for parameters and gradients.
//!
//! Only what the layers need: matrix-vector products, their transposes for
//! backprop, outer-product accumulation, and fan-in scaled initialization.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn vector(len: usize) -> Self {
        Self::zeros(len, 1)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    /// Uniform in +-1/sqrt(fan_in), the convention for projection weights.
    pub fn init_uniform(rows: usize, cols: usize, rng: &mut CounterRng) -> Self {
        let bound = 1.0 / crate::math::sqrt(cols.max(1) as f64);
        let data = (0..rows * cols).map(|_| rng.range_f64(-bound, bound)).collect();
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn zero_out(&mut self) {
        self.data.fill(0.0);
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    /// y = W x, written into `out` (length rows).
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            out[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// out += W^T y (backprop of matvec to its input; length cols).
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            let yr = y[r];
            for c in 0..self.cols {
                out[c] += row[c] * yr;
            }
        }
    }

    /// self += y x^T (gradient of matvec with respect to the weights).
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let base = r * self.cols;
            let yr = y[r];
            for c in 0..self.cols {
                self.data[base + c] += yr * x[c];
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (d, o) in self.data.iter_mut().zip(&other.data) {
            *d += scale * o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let w = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(w.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        let mut back = vec![0.0; 3];
        w.matvec_t_acc(&[1.0, 1.0], &mut back);
        assert_eq!(back, vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut g = Tensor::zeros(2, 2);
        g.outer_acc(&[1.0, 2.0], &[3.0, 4.0]);
        g.outer_acc(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(g.data, vec![4.0, 5.0, 6.0, 8.0]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = CounterRng::new(3);
        let w = Tensor::init_uniform(16, 25, &mut rng);
        let bound = 1.0 / 5.0;
        assert!(w.data.iter().all(|&v| v > -bound && v < bound));
    }
}
