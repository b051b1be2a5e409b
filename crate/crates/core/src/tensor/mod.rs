//! Dense `f64` tensors and a tape-based reverse-mode differentiator.
//!
//! Tensors are immutable row-major buffers. Arithmetic happens on a
//! [`Tape`], which records every operation whose inputs need a gradient and
//! replays them in reverse on [`Tape::backward`]. Per-op shape rules are
//! documented on the corresponding `Tape` method; there is no implicit
//! broadcasting beyond [`Tape::add_row`].

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, op_suite, GradCheckReport, SUITE_STEP};
pub use tape::{Gradients, Tape, Var};

use std::fmt;

/// Additive value used for forbidden attention positions.
pub const MASK_VALUE: f64 = -1e9;

/// Epsilon added to the variance inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("masked_fill: row {row} has no permitted key")]
    FullyMasked { row: usize },
    #[error("{op}: index {index} out of range for size {size}")]
    Index { op: &'static str, index: usize, size: usize },
    #[error("grad_check: {0}")]
    GradCheck(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Rows and columns when viewed as a matrix; vectors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of rows `start..end` of a matrix.
    pub fn rows_range(&self, start: usize, end: usize) -> Tensor {
        let (_, cols) = self.dims2();
        Tensor { shape: vec![end - start, cols], data: self.data[start * cols..end * cols].to_vec() }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

/// Boolean attention connectivity: `allowed(i, j)` says whether query `i`
/// may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(TensorError::Shape {
                op: "attn_mask",
                detail: format!("{}x{} mask needs {} entries, got {}", rows, cols, rows * cols, allowed.len()),
            });
        }
        Ok(Self { rows, cols, allowed })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allowed: vec![true; rows * cols] }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|idx| idx % n <= idx / n).collect();
        Self { rows: n, cols: n, allowed }
    }

    /// Every query sees exactly the valid keys.
    pub fn from_key_validity(rows: usize, valid: &[bool]) -> Self {
        let cols = valid.len();
        let mut allowed = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            allowed.extend_from_slice(valid);
        }
        Self { rows, cols, allowed }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, allowed: bool) {
        self.allowed[row * self.cols + col] = allowed;
    }

    /// Elementwise conjunction.
    pub fn and(&self, other: &AttnMask) -> Result<AttnMask> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::Shape {
                op: "attn_mask.and",
                detail: format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let allowed = self.allowed.iter().zip(&other.allowed).map(|(a, b)| *a && *b).collect();
        Ok(AttnMask { rows: self.rows, cols: self.cols, allowed })
    }

    /// Restrict to a contiguous block of queries and keys.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> AttnMask {
        let mut allowed = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            allowed.extend_from_slice(&self.allowed[r * self.cols + cols.start..r * self.cols + cols.end]);
        }
        AttnMask { rows: rows.len(), cols: cols.len(), allowed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().dims2(), (2, 3));
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = AttnMask::causal(3);
        assert!(m.allows(0, 0) && !m.allows(0, 1) && m.allows(2, 1) && m.allows(2, 2));
    }

    #[test]
    fn block_extracts_submask() {
        let m = AttnMask::causal(4).block(2..4, 0..3);
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert!(m.allows(0, 2));
        assert!(m.allows(1, 2));
    }
}
