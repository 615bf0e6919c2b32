//! Dense 64-bit tensors, a define-by-run autodiff tape, MLPs and Adam.

mod adam;
mod nn;
mod tape;

pub use adam::{AdamConfig, AdamState, PlateauScheduler};
pub use nn::{Activation, Linear, Mlp};
pub use tape::{Gradients, Tape, Var};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// A `1 × 1` matrix.
    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    /// A `rows × 1` column.
    pub fn column(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len(), 1], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }
}

/// `out[n×m] = a[n×k] · b[k×m]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `out[n×k] = g[n×m] · bᵀ` where `b` is `k×m`.
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[k×m] = aᵀ · g` where `a` is `n×k` and `g` is `n×m`.
pub(crate) fn matmul_at(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}
