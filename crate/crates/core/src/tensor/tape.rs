//! Define-by-run reverse-mode autodiff.
//!
//! Every forward op appends a node holding its value; node order is a
//! topological order. A tape is built for one loss evaluation: `backward`
//! borrows it immutably, so the same tape can be differentiated from several
//! roots, and it is dropped once the gradients have been read.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};
use crate::flows::spline;
use crate::special::{log_sigmoid, sigmoid};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    RowLogSumExp(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Reshape(usize),
    Spline {
        u: usize,
        params: usize,
        bins: usize,
        bound: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves the gradient out; leaves that did not influence the root get zeros
    /// of the given shape.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, op: Op, parents: &[usize], value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        if !t.is_matrix() {
            return Err(Error::ShapeMismatch {
                op,
                left: t.shape().to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims("matmul", a)?;
        let (k2, m) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push("matmul", Op::MatMul(a.0, b.0), &[a.0, b.0], Tensor::matrix(n, m, data)?)
    }

    /// Adds a `1 × m` row to every row of an `n × m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("add_row", a)?;
        let (r, m2) = self.matrix_dims("add_row", row)?;
        if r != 1 || m != m2 {
            return Err(mismatch("add_row", self.value(a), self.value(row)));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(m) {
            for (d, b) in chunk.iter_mut().zip(bias) {
                *d += b;
            }
        }
        self.push("add_row", Op::AddRow(a.0, row.0), &[a.0, row.0], Tensor::matrix(n, m, data)?)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, op, &[a.0, b.0], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, op, &[a.0], value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("offset", a, Op::Offset(a.0), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a.0), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("log_sigmoid", a, Op::LogSigmoid(a.0), log_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a.0), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary("ln", a, Op::Ln(a.0), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, Op::Square(a.0), |x| x * x)
    }

    /// Sum of all entries as a `1 × 1` matrix.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Op::Sum(a.0), &[a.0], Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Op::Mean(a.0), &[a.0], Tensor::scalar(s))
    }

    /// Per-row sums: `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("row_sum", a)?;
        let data = if m == 0 {
            vec![0.0; n]
        } else {
            self.value(a).data().chunks(m).map(|r| r.iter().sum()).collect()
        };
        self.push("row_sum", Op::RowSum(a.0), &[a.0], Tensor::matrix(n, 1, data)?)
    }

    /// Per-row `ln Σ exp`: `n × m → n × 1`, max-shifted.
    pub fn row_logsumexp(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("row_logsumexp", a)?;
        if m == 0 {
            return Err(Error::Empty("row_logsumexp"));
        }
        let data = self
            .value(a)
            .data()
            .chunks(m)
            .map(crate::special::logsumexp)
            .collect();
        self.push(
            "row_logsumexp",
            Op::RowLogSumExp(a.0),
            &[a.0],
            Tensor::matrix(n, 1, data)?,
        )
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (n, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != n {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            "concat_cols",
            Op::ConcatCols(idx.clone()),
            &idx,
            Tensor::matrix(n, total, data)?,
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.matrix_dims("slice_cols", a)?;
        if start > end || end > m {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: vec![n, m],
                right: vec![start, end],
            });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&src[i * m + start..i * m + end]);
        }
        self.push("slice_cols", Op::SliceCols(a.0, start), &[a.0], Tensor::matrix(n, w, data)?)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.matrix_dims("slice_rows", a)?;
        if start > end || end > n {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: vec![n, m],
                right: vec![start, end],
            });
        }
        let data = self.value(a).data()[start * m..end * m].to_vec();
        self.push(
            "slice_rows",
            Op::SliceRows(a.0, start),
            &[a.0],
            Tensor::matrix(end - start, m, data)?,
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: t.shape().to_vec(),
                right: vec![rows, cols],
            });
        }
        let data = t.data().to_vec();
        self.push("reshape", Op::Reshape(a.0), &[a.0], Tensor::matrix(rows, cols, data)?)
    }

    /// Elementwise rational-quadratic spline.
    ///
    /// `u` is `n × m`; `params` is `n × m(3K−1)` holding, for each column, `K`
    /// raw widths, `K` raw heights and `K−1` raw log-derivatives. The result is
    /// `n × (m+1)`: the `m` transformed values followed by the summed
    /// log-abs-determinant.
    pub fn rq_spline(&mut self, u: Var, params: Var, bins: usize, bound: f64) -> Result<Var> {
        let (n, m) = self.matrix_dims("rq_spline", u)?;
        let (n2, p) = self.matrix_dims("rq_spline", params)?;
        let per = spline::params_per_dim(bins);
        if n != n2 || p != m * per {
            return Err(mismatch("rq_spline", self.value(u), self.value(params)));
        }
        let out = spline::forward_rows(self.value(u).data(), self.value(params).data(), n, m, bins, bound)?;
        self.push(
            "rq_spline",
            Op::Spline {
                u: u.0,
                params: params.0,
                bins,
                bound,
            },
            &[u.0, params.0],
            Tensor::matrix(n, m + 1, out)?,
        )
    }

    /// Reverse pass from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut out: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |j: usize| self.nodes[j].value.data();
            match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (self.nodes[*a].value.rows(), self.nodes[*a].value.cols());
                    let m = self.nodes[*b].value.cols();
                    if self.nodes[*a].needs_grad {
                        let ga = matmul_bt(&g, val(*b), n, k, m);
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[*b].needs_grad {
                        let gb = matmul_at(val(*a), &g, n, k, m);
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.nodes[*row].needs_grad {
                        let m = self.nodes[*row].value.cols();
                        let mut gb = vec![0.0; m];
                        for chunk in g.chunks(m) {
                            for (s, x) in gb.iter_mut().zip(chunk) {
                                *s += x;
                            }
                        }
                        self.accumulate(&mut grads, *row, gb);
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *b, g.clone());
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *b, g.iter().map(|x| -x).collect());
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    self.accumulate(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::Offset(a) => self.accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, &y)| if y > 0.0 { *x } else { 0.0 }).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = g.iter().zip(y).map(|(x, s)| x * s * (1.0 - s)).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, &z)| x * sigmoid(-z)).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let ga = g.iter().zip(y).map(|(x, e)| x * e).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, v)| x / v).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.iter().zip(val(*a)).map(|(x, v)| 2.0 * x * v).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    self.accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len();
                    self.accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::RowSum(a) => {
                    let m = self.nodes[*a].value.cols();
                    let ga = g.iter().flat_map(|&x| core::iter::repeat(x).take(m)).collect();
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::RowLogSumExp(a) => {
                    let m = self.nodes[*a].value.cols();
                    let y = node.value.data();
                    let mut ga = Vec::with_capacity(g.len() * m);
                    for (i, row) in val(*a).chunks(m).enumerate() {
                        ga.extend(row.iter().map(|&v| g[i] * (v - y[i]).exp()));
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let n = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if self.nodes[p].needs_grad {
                            let mut gp = Vec::with_capacity(n * w);
                            for r in 0..n {
                                gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            self.accumulate(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (n, m) = (self.nodes[*a].value.rows(), self.nodes[*a].value.cols());
                    let w = node.value.cols();
                    let mut ga = vec![0.0; n * m];
                    for r in 0..n {
                        ga[r * m + start..r * m + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let m = self.nodes[*a].value.cols();
                    let mut ga = vec![0.0; self.nodes[*a].value.len()];
                    ga[start * m..start * m + g.len()].copy_from_slice(&g);
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => self.accumulate(&mut grads, *a, g),
                Op::Spline { u, params, bins, bound } => {
                    let (n, m) = (self.nodes[*u].value.rows(), self.nodes[*u].value.cols());
                    let (gu, gp) =
                        spline::backward_rows(val(*u), val(*params), &g, n, m, *bins, *bound)?;
                    self.accumulate(&mut grads, *u, gu);
                    self.accumulate(&mut grads, *params, gp);
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }
}
