use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor. Every tensor flowing through a [`Tape`](super::Tape)
/// is two-dimensional; scalars are `[1, 1]` and biases `[1, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                context: "Tensor::new",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A single row `[1, len]`.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// `out[r, c] += sum_p a[r, p] * b[p, c]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let a_row = &a[r * inner..(r + 1) * inner];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * cols..(p + 1) * cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[r, p] += sum_c g[r, c] * b[p, c]` (gradient w.r.t. the left operand).
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let g_row = &g[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * inner..(r + 1) * inner];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * cols..(p + 1) * cols];
            let mut acc = 0.0;
            for (gv, bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o += acc;
        }
    }
}

/// `out[p, c] += sum_r a[r, p] * g[r, c]` (gradient w.r.t. the right operand).
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let a_row = &a[r * inner..(r + 1) * inner];
        let g_row = &g[r * cols..(r + 1) * cols];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * cols..(p + 1) * cols];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}
