//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every kernel call appends a node holding its output value and enough saved
//! state to run its vector-Jacobian product. Nodes are only ever appended, so
//! the tape is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep. Gradients of a tensor used more than once are
//! summed.

use alloc::vec;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::kernels::{layer_norm_into, log_sigmoid, sigmoid, softmax_into};
use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm { input: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    GatherRows { input: Var, index: Vec<Option<usize>> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Bce { logits: Var, targets: Vec<f64>, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`. Nodes that require gradients but do not reach the
    /// loss get a zero tensor; nodes that never required one return `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op, expected: (a.rows(), a.cols()), found: (b.rows(), b.cols()) });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.push_shared(Arc::new(value), op, needs_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that shares `value` instead of copying it.
    pub fn shared_leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::Shape { op: "matmul", expected: (x.cols(), y.cols()), found: (y.rows(), y.cols()) });
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let mut out = Tensor::zeros(m, n);
        gemm_acc(x.data(), y.data(), out.data_mut(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::Shape { op: "matmul_bt", expected: (y.rows(), x.cols()), found: (y.rows(), y.cols()) });
        }
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        let mut out = Tensor::zeros(m, n);
        gemm_bt_acc(x.data(), y.data(), out.data_mut(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMulBt(a, b), ng))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        check_same(op, x, y)?;
        let mut out = x.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(y.data()) {
            *o = f(*o, v);
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn row_broadcast(&mut self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape { op, expected: (1, x.cols()), found: (r.rows(), r.cols()) });
        }
        let mut out = x.clone();
        let cols = x.cols();
        if cols > 0 {
            for chunk in out.data_mut().chunks_mut(cols) {
                for (o, &v) in chunk.iter_mut().zip(r.data()) {
                    *o = f(*o, v);
                }
            }
        }
        Ok(out)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::MulRow(a, row), ng))
    }

    /// Scales row `i` of `a` by `col[i]` where `col` is `m x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::Shape { op: "mul_col", expected: (x.rows(), 1), found: (c.rows(), c.cols()) });
        }
        let mut out = x.clone();
        for r in 0..x.rows() {
            let s = c.data()[r];
            out.row_slice_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::MulCol(a, col), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|o| *o *= c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|o| *o = o.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Row-wise softmax. With a mask (same size as `a`), excluded entries
    /// are exactly zero; a row with no valid entry yields all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(m) = &mask {
            if m.len() != x.len() {
                return Err(Error::Shape { op: "softmax_rows", expected: (x.rows(), x.cols()), found: (m.len(), 1) });
            }
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(x.rows(), cols);
        for r in 0..x.rows() {
            let rm = mask.as_ref().map(|m| &m[r * cols..(r + 1) * cols]);
            softmax_into(x.row_slice(r), rm, out.row_slice_mut(r));
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (x, g, b) = (self.value(a), self.value(gain), self.value(bias));
        let cols = x.cols();
        if g.shape() != [1, cols] || b.shape() != [1, cols] {
            return Err(Error::Shape { op: "layer_norm", expected: (1, cols), found: (g.rows(), g.cols()) });
        }
        let mut out = Tensor::zeros(x.rows(), cols);
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; x.rows()];
        for r in 0..x.rows() {
            inv_std[r] = layer_norm_into(
                x.row_slice(r),
                g.data(),
                b.data(),
                eps,
                &mut xhat[r * cols..(r + 1) * cols],
                out.row_slice_mut(r),
            );
        }
        let ng = self.ng(a) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { input: a, gain, bias, xhat, inv_std }, ng))
    }

    /// Builds a matrix whose row `r` is row `index[r]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(index.len(), x.cols());
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                if s >= x.rows() {
                    return Err(Error::Shape { op: "gather_rows", expected: (x.rows(), x.cols()), found: (s, x.cols()) });
                }
                out.row_slice_mut(r).copy_from_slice(x.row_slice(s));
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows { input: a, index }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::Shape { op: "concat_cols", expected: (rows, v.cols()), found: (v.rows(), v.cols()) });
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                out.row_slice_mut(r)[off..off + v.cols()].copy_from_slice(v.row_slice(r));
                off += v.cols();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Shape { op: "concat_rows", expected: (v.rows(), cols), found: (v.rows(), v.cols()) });
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::Shape { op: "slice_rows", expected: (x.rows(), x.cols()), found: (start + len, x.cols()) });
        }
        let cols = x.cols();
        let out = Tensor::from_vec(len, cols, x.data()[start * cols..(start + len) * cols].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows { input: a, start }, ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Shape { op: "slice_cols", expected: (x.rows(), x.cols()), found: (x.rows(), start + len) });
        }
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_slice_mut(r).copy_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols { input: a, start }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshape(rows, cols)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean sigmoid binary cross-entropy over unmasked entries, computed
    /// from logits as `-y log σ(x) - (1 - y) log σ(-x)`.
    ///
    /// Returns a `1 x 1` zero when every entry is masked.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor, mask: Vec<bool>) -> Result<Var> {
        let x = self.value(logits);
        check_same("bce_with_logits", x, targets)?;
        if mask.len() != x.len() {
            return Err(Error::Shape { op: "bce_with_logits", expected: (x.rows(), x.cols()), found: (mask.len(), 1) });
        }
        let mut total = 0.0;
        let mut count = 0;
        for ((&z, &y), &m) in x.data().iter().zip(targets.data()).zip(&mask) {
            if m {
                total -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce { logits, targets: targets.data().to_vec(), mask, count },
            ng,
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::NonScalarLoss((lv.rows(), lv.cols())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Leaves that require a gradient but did not reach the loss get zero.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
            if !node.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.ng(v) {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1])))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_bt_acc(gd, y.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_at_acc(x.data(), gd, gb.data_mut(), m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = x yᵀ, x: m x k, y: n x k
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.rows());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_acc(gd, y.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_at_acc(gd, x.data(), gb.data_mut(), m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(t) = self.acc(grads, v) {
                        t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o += d);
                }
                if let Some(t) = self.acc(grads, *b) {
                    t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o -= d);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o += d);
                }
                let cols = g.cols();
                if let Some(t) = self.acc(grads, *row) {
                    if cols > 0 {
                        for chunk in gd.chunks(cols) {
                            t.data_mut().iter_mut().zip(chunk).for_each(|(o, d)| *o += d);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if let Some(t) = self.acc(grads, *a) {
                    for ((o, d), yv) in t.data_mut().iter_mut().zip(gd).zip(y.data()) {
                        *o += d * yv;
                    }
                }
                if let Some(t) = self.acc(grads, *b) {
                    for ((o, d), xv) in t.data_mut().iter_mut().zip(gd).zip(x.data()) {
                        *o += d * xv;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (x, r) = (self.value(*a), self.value(*row));
                let cols = x.cols();
                if let Some(t) = self.acc(grads, *a) {
                    for (i, (o, d)) in t.data_mut().iter_mut().zip(gd).enumerate() {
                        *o += d * r.data()[i % cols];
                    }
                }
                if let Some(t) = self.acc(grads, *row) {
                    for (i, (d, xv)) in gd.iter().zip(x.data()).enumerate() {
                        t.data_mut()[i % cols] += d * xv;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (x, c) = (self.value(*a), self.value(*col));
                let cols = x.cols();
                if let Some(t) = self.acc(grads, *a) {
                    for (i, (o, d)) in t.data_mut().iter_mut().zip(gd).enumerate() {
                        *o += d * c.data()[i / cols];
                    }
                }
                if let Some(t) = self.acc(grads, *col) {
                    for (i, (d, xv)) in gd.iter().zip(x.data()).enumerate() {
                        t.data_mut()[i / cols] += d * xv;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o += d * c);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                if let Some(t) = self.acc(grads, *a) {
                    for ((o, d), xv) in t.data_mut().iter_mut().zip(gd).zip(x.data()) {
                        if *xv > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::Softmax(input) => {
                let y = &node.value;
                let cols = y.cols();
                if let Some(t) = self.acc(grads, *input) {
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let tr = t.row_slice_mut(r);
                        for c in 0..cols {
                            tr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { input, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain);
                let cols = g.cols();
                let n = cols as f64;
                if let Some(t) = self.acc(grads, *input) {
                    for r in 0..g.rows() {
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let dxh = gr[c] * gv.data()[c];
                            mean_d += dxh;
                            mean_dx += dxh * xr[c];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        let tr = t.row_slice_mut(r);
                        for c in 0..cols {
                            let dxh = gr[c] * gv.data()[c];
                            tr[c] += inv_std[r] * (dxh - mean_d - xr[c] * mean_dx);
                        }
                    }
                }
                if let Some(t) = self.acc(grads, *gain) {
                    for (i, (d, xv)) in gd.iter().zip(xhat).enumerate() {
                        t.data_mut()[i % cols] += d * xv;
                    }
                }
                if let Some(t) = self.acc(grads, *bias) {
                    for (i, d) in gd.iter().enumerate() {
                        t.data_mut()[i % cols] += d;
                    }
                }
            }
            Op::GatherRows { input, index } => {
                let cols = g.cols();
                if let Some(t) = self.acc(grads, *input) {
                    for (r, src) in index.iter().enumerate() {
                        if let Some(s) = *src {
                            let gr = &gd[r * cols..(r + 1) * cols];
                            t.row_slice_mut(s).iter_mut().zip(gr).for_each(|(o, d)| *o += d);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(t) = self.acc(grads, p) {
                        for r in 0..g.rows() {
                            let src = &gd[r * cols + off..r * cols + off + pc];
                            t.row_slice_mut(r).iter_mut().zip(src).for_each(|(o, d)| *o += d);
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(t) = self.acc(grads, p) {
                        t.data_mut().iter_mut().zip(&gd[off..off + len]).for_each(|(o, d)| *o += d);
                    }
                    off += len;
                }
            }
            Op::SliceRows { input, start } => {
                let cols = g.cols();
                if let Some(t) = self.acc(grads, *input) {
                    t.data_mut()[start * cols..start * cols + gd.len()]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(o, d)| *o += d);
                }
            }
            Op::SliceCols { input, start } => {
                let len = g.cols();
                if let Some(t) = self.acc(grads, *input) {
                    for r in 0..g.rows() {
                        let src = &gd[r * len..(r + 1) * len];
                        t.row_slice_mut(r)[*start..start + len].iter_mut().zip(src).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().zip(gt.data()).for_each(|(o, d)| *o += d);
                }
            }
            Op::Reshape(a) => {
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().zip(gd).for_each(|(o, d)| *o += d);
                }
            }
            Op::Sum(a) => {
                let d = gd[0];
                if let Some(t) = self.acc(grads, *a) {
                    t.data_mut().iter_mut().for_each(|o| *o += d);
                }
            }
            Op::Bce { logits, targets, mask, count } => {
                if *count == 0 {
                    return;
                }
                let x = self.value(*logits);
                let scale = gd[0] / *count as f64;
                if let Some(t) = self.acc(grads, *logits) {
                    for (i, o) in t.data_mut().iter_mut().enumerate() {
                        if mask[i] {
                            *o += scale * (sigmoid(x.data()[i]) - targets[i]);
                        }
                    }
                }
            }
        }
    }
}
