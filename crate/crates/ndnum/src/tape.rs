//! Reverse-mode automatic differentiation over [`DenseArray`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order: [`Graph::backward`] walks the indices from the loss down
//! to zero and visits every node at most once.
//!
//! Operations are coarse-grained (a whole matrix product, a whole recurrent
//! sweep) so the tape stays short even for the full backbone.

use crate::array::DenseArray;
use crate::error::{NumError, Result};
use crate::gemm::gemm;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Cached activations of one recurrent sweep, indexed by original time step.
#[derive(Debug, Clone)]
struct LstmCache {
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    cell: Vec<f64>,
    cell_tanh: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddConst(Var),
    MulConst(Var, DenseArray),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: DenseArray,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    SumSq(Var),
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        columns: DenseArray,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        cache: LstmCache,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRowBias(..) => "add_row_bias",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNormRows { .. } => "layer_norm_rows",
            Op::Transpose(..) => "transpose",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::SumSq(..) => "sum_sq",
            Op::Conv1d { .. } => "conv1d",
            Op::Lstm { .. } => "lstm",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRowBias(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::SliceCols(a, ..)
            | Op::MeanRows(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::SumSq(a) => vec![*a],
            Op::LayerNormRows { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols(vs) => vs.clone(),
            Op::Conv1d {
                input,
                kernels,
                bias,
                ..
            } => vec![*input, *kernels, *bias],
            Op::Lstm {
                x, w_ih, w_hh, bias, ..
            } => vec![*x, *w_ih, *w_hh, *bias],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseArray,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseArray> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &DenseArray, b: &DenseArray) -> NumError {
    NumError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, so leaves registered
    /// up front can be reused across many forward passes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: DenseArray) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: DenseArray, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Operation id recorded for `v`.
    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    /// Predecessor nodes of `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: DenseArray) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| mismatch("add", self.value(a), self.value(b)))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x - y)
            .map_err(|_| mismatch("sub", self.value(a), self.value(b)))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| mismatch("mul", self.value(a), self.value(b)))?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), value)
    }

    /// Adds a length-`c` bias to every row of an `r×c` array.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (r, c) = xv.require_2d("add_row_bias")?;
        if bv.len() != c {
            return Err(mismatch("add_row_bias", xv, bv));
        }
        let mut out = xv.clone();
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRowBias(x, bias), out))
    }

    /// `x + offset` where `offset` is not differentiated.
    pub fn add_const(&mut self, x: Var, offset: &DenseArray) -> Result<Var> {
        let value = self
            .value(x)
            .zip_map(offset, |a, b| a + b)
            .map_err(|_| mismatch("add_const", self.value(x), offset))?;
        Ok(self.push(Op::AddConst(x), value))
    }

    /// `x ⊙ mask` where `mask` is not differentiated (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: DenseArray) -> Result<Var> {
        let value = self
            .value(x)
            .zip_map(&mask, |a, b| a * b)
            .map_err(|_| mismatch("mul_const", self.value(x), &mask))?;
        Ok(self.push(Op::MulConst(x, mask), value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, _) = xv.require_2d("softmax_rows")?;
        let mut out = xv.clone();
        for i in 0..r {
            softmax_in_place(out.row_mut(i));
        }
        Ok(self.push(Op::SoftmaxRows(x), out))
    }

    /// Per-row layer normalization with learned scale and shift.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.require_2d("layer_norm_rows")?;
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != c || bv.len() != c {
            return Err(mismatch("layer_norm_rows", xv, gv));
        }
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(r);
        let mut out = xv.clone();
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            let xh = xhat.row_mut(i);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * s;
            }
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = xhat.get(i, j) * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push(
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        Ok(self.push(Op::Transpose(x), value))
    }

    /// Columns `start..end` of a 2-D array.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.require_2d("slice_cols")?;
        if start >= end || end > c {
            return Err(NumError::Contract(format!(
                "slice_cols: range {start}..{end} outside 0..{c}"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let value = DenseArray::new(vec![r, w], out)?;
        Ok(self.push(Op::SliceCols(x, start, end), value))
    }

    /// Horizontal concatenation of 2-D arrays with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Contract("concat_cols: no inputs".into()))?;
        let r = self.value(*first).require_2d("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).require_2d("concat_cols")?;
            if pr != r {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = DenseArray::new(vec![r, total], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Mean over rows: `r×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.require_2d("mean_rows")?;
        let c = xv.cols();
        let value = DenseArray::new(vec![1, c], xv.column_means())?;
        Ok(self.push(Op::MeanRows(x), value))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseArray::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let value = DenseArray::scalar(self.value(x).sum_sq());
        self.push(Op::SumSq(x), value)
    }

    /// Length-preserving temporal convolution.
    ///
    /// `input` is `L×c_in`, `kernels` is `w×c_in×c_out` and `bias` holds
    /// `c_out` values. The width must be odd; the sequence is zero-padded by
    /// `w/2` steps on both sides.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let xv = self.value(input);
        let kv = self.value(kernels);
        let bv = self.value(bias);
        let (l, c_in) = xv.require_2d("conv1d")?;
        if kv.ndim() != 3 || kv.shape()[1] != c_in {
            return Err(mismatch("conv1d", xv, kv));
        }
        let (w, c_out) = (kv.shape()[0], kv.shape()[2]);
        if w % 2 == 0 {
            return Err(NumError::Config(format!("conv1d width {w} must be odd")));
        }
        if w > l {
            return Err(NumError::Config(format!(
                "conv1d width {w} exceeds sequence length {l}"
            )));
        }
        if bv.len() != c_out {
            return Err(mismatch("conv1d", kv, bv));
        }
        let columns = im2col(xv.data(), l, c_in, w);
        let mut out = vec![0.0; l * c_out];
        gemm(l, w * c_in, c_out, &columns, false, kv.data(), false, &mut out, false);
        for row in out.chunks_mut(c_out) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = DenseArray::new(vec![l, c_out], out)?;
        let columns = DenseArray::new(vec![l, w * c_in], columns)?;
        Ok(self.push(
            Op::Conv1d {
                input,
                kernels,
                bias,
                columns,
            },
            value,
        ))
    }

    /// One LSTM sweep over the rows of `x` (`L×d`), gates ordered
    /// input, forget, cell, output. `w_ih` is `d×4h`, `w_hh` is `h×4h`, `bias`
    /// holds `4h` values. With `reverse` the sweep runs from the last row to
    /// the first; output row `t` is always the hidden state at input row `t`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let xv = self.value(x);
        let (l, d) = xv.require_2d("lstm")?;
        let wi = self.value(w_ih);
        let wh = self.value(w_hh);
        let bv = self.value(bias);
        let (d2, four_h) = wi.require_2d("lstm")?;
        if d2 != d || four_h % 4 != 0 {
            return Err(mismatch("lstm", xv, wi));
        }
        let h = four_h / 4;
        if wh.shape() != [h, four_h] || bv.len() != four_h {
            return Err(mismatch("lstm", wi, wh));
        }
        let mut pre_all = vec![0.0; l * four_h];
        gemm(l, d, four_h, xv.data(), false, wi.data(), false, &mut pre_all, false);

        let mut cache = LstmCache {
            gate_i: vec![0.0; l * h],
            gate_f: vec![0.0; l * h],
            gate_g: vec![0.0; l * h],
            gate_o: vec![0.0; l * h],
            cell: vec![0.0; l * h],
            cell_tanh: vec![0.0; l * h],
        };
        let mut out = vec![0.0; l * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut pre = vec![0.0; four_h];
        for s in 0..l {
            let t = if reverse { l - 1 - s } else { s };
            pre.copy_from_slice(&pre_all[t * four_h..(t + 1) * four_h]);
            for (p, b) in pre.iter_mut().zip(bv.data()) {
                *p += b;
            }
            for (k, hp) in h_prev.iter().enumerate() {
                if *hp != 0.0 {
                    let wrow = &wh.data()[k * four_h..(k + 1) * four_h];
                    for (p, w) in pre.iter_mut().zip(wrow) {
                        *p += hp * w;
                    }
                }
            }
            let base = t * h;
            for j in 0..h {
                let ig = sigmoid(pre[j]);
                let fg = sigmoid(pre[h + j]);
                let gg = pre[2 * h + j].tanh();
                let og = sigmoid(pre[3 * h + j]);
                let c = fg * c_prev[j] + ig * gg;
                let tc = c.tanh();
                let hv = og * tc;
                cache.gate_i[base + j] = ig;
                cache.gate_f[base + j] = fg;
                cache.gate_g[base + j] = gg;
                cache.gate_o[base + j] = og;
                cache.cell[base + j] = c;
                cache.cell_tanh[base + j] = tc;
                out[base + j] = hv;
                c_prev[j] = c;
                h_prev[j] = hv;
            }
        }
        let value = DenseArray::new(vec![l, h], out)?;
        Ok(self.push(
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                cache,
            },
            value,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(DenseArray::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<DenseArray>], v: Var, delta: DenseArray) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, i: usize, g: &DenseArray, grads: &mut [Option<DenseArray>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, false);
                    self.accum(grads, *a, DenseArray::new(av.shape().to_vec(), da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
                    self.accum(grads, *b, DenseArray::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accum(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.wants(*b) {
                    self.accum(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => self.accum(grads, *a, g.map(|v| v * c)),
            Op::AddRowBias(x, b) => {
                self.accum(grads, *x, g.clone());
                if self.wants(*b) {
                    let sums = g.column_means().iter().map(|m| m * g.rows() as f64).collect();
                    let bshape = self.value(*b).shape().to_vec();
                    self.accum(grads, *b, DenseArray::new(bshape, sums)?);
                }
            }
            Op::AddConst(x) => self.accum(grads, *x, g.clone()),
            Op::MulConst(x, mask) => self.accum(grads, *x, g.zip_map(mask, |a, b| a * b)?),
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accum(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                self.accum(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                self.accum(grads, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut d = y.clone();
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                        *dv = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *x, d);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (r, c) = (xhat.rows(), xhat.cols());
                if self.wants(*gamma) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    self.accum(grads, *gamma, DenseArray::new(gv.shape().to_vec(), dg)?);
                }
                if self.wants(*beta) {
                    let db: Vec<f64> = g.column_means().iter().map(|m| m * r as f64).collect();
                    let bshape = self.value(*beta).shape().to_vec();
                    self.accum(grads, *beta, DenseArray::new(bshape, db)?);
                }
                if self.wants(*x) {
                    let mut dx = xhat.clone();
                    for i in 0..r {
                        let dxhat: Vec<f64> = (0..c).map(|j| g.get(i, j) * gv.data()[j]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dx = dxhat
                            .iter()
                            .zip(xhat.row(i))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / c as f64;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (dxhat[j] - mean_d - xhat.get(i, j) * mean_dx);
                        }
                    }
                    self.accum(grads, *x, dx);
                }
            }
            Op::Transpose(x) => self.accum(grads, *x, g.transpose()?),
            Op::SliceCols(x, start, end) => {
                let xv = self.value(*x);
                let mut d = DenseArray::zeros(xv.shape());
                for r in 0..xv.rows() {
                    d.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                }
                self.accum(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let w = pv.cols();
                    if self.wants(*p) {
                        let mut d = DenseArray::zeros(pv.shape());
                        for r in 0..pv.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accum(grads, *p, d);
                    }
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let r = xv.rows();
                let mut d = DenseArray::zeros(xv.shape());
                for i in 0..r {
                    for (o, gv) in d.row_mut(i).iter_mut().zip(g.data()) {
                        *o = gv / r as f64;
                    }
                }
                self.accum(grads, *x, d);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accum(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accum(grads, *x, DenseArray::full(self.value(*x).shape(), gv));
            }
            Op::SumSq(x) => {
                let gv = g.data()[0];
                self.accum(grads, *x, self.value(*x).map(|v| 2.0 * gv * v));
            }
            Op::Conv1d {
                input,
                kernels,
                bias,
                columns,
            } => {
                let kv = self.value(*kernels);
                let (w, c_in, c_out) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let l = g.rows();
                if self.wants(*kernels) {
                    let mut dk = vec![0.0; w * c_in * c_out];
                    gemm(w * c_in, l, c_out, columns.data(), true, g.data(), false, &mut dk, false);
                    self.accum(grads, *kernels, DenseArray::new(kv.shape().to_vec(), dk)?);
                }
                if self.wants(*bias) {
                    let db: Vec<f64> = g.column_means().iter().map(|m| m * l as f64).collect();
                    let bshape = self.value(*bias).shape().to_vec();
                    self.accum(grads, *bias, DenseArray::new(bshape, db)?);
                }
                if self.wants(*input) {
                    let mut dcols = vec![0.0; l * w * c_in];
                    gemm(l, c_out, w * c_in, g.data(), false, kv.data(), true, &mut dcols, false);
                    let dx = col2im(&dcols, l, c_in, w);
                    self.accum(grads, *input, DenseArray::new(vec![l, c_in], dx)?);
                }
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                cache,
            } => self.backprop_lstm(g, &node.value, *x, *w_ih, *w_hh, *bias, *reverse, cache, grads)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        g: &DenseArray,
        out: &DenseArray,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        cache: &LstmCache,
        grads: &mut [Option<DenseArray>],
    ) -> Result<()> {
        let xv = self.value(x);
        let wi = self.value(w_ih);
        let wh = self.value(w_hh);
        let (l, d) = (xv.rows(), xv.cols());
        let four_h = wi.cols();
        let h = four_h / 4;
        let mut dpre_all = vec![0.0; l * four_h];
        let mut dwh = vec![0.0; h * four_h];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let order = |s: usize| if reverse { l - 1 - s } else { s };
        for s in (0..l).rev() {
            let t = order(s);
            let prev = if s > 0 { Some(order(s - 1)) } else { None };
            let base = t * h;
            let dpre = &mut dpre_all[t * four_h..(t + 1) * four_h];
            for j in 0..h {
                let dh = g.data()[base + j] + dh_next[j];
                let (ig, fg, gg, og) = (
                    cache.gate_i[base + j],
                    cache.gate_f[base + j],
                    cache.gate_g[base + j],
                    cache.gate_o[base + j],
                );
                let tc = cache.cell_tanh[base + j];
                let c_prev = prev.map_or(0.0, |p| cache.cell[p * h + j]);
                let d_o = dh * tc;
                let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * gg;
                let d_g = dc * ig;
                let d_f = dc * c_prev;
                dc_next[j] = dc * fg;
                dpre[j] = d_i * ig * (1.0 - ig);
                dpre[h + j] = d_f * fg * (1.0 - fg);
                dpre[2 * h + j] = d_g * (1.0 - gg * gg);
                dpre[3 * h + j] = d_o * og * (1.0 - og);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if let Some(p) = prev {
                let h_prev = out.row(p);
                for (k, hp) in h_prev.iter().enumerate() {
                    let wrow = &wh.data()[k * four_h..(k + 1) * four_h];
                    let drow = &mut dwh[k * four_h..(k + 1) * four_h];
                    let mut acc = 0.0;
                    for ((dw, w), dp) in drow.iter_mut().zip(wrow).zip(dpre.iter()) {
                        *dw += hp * dp;
                        acc += w * dp;
                    }
                    dh_next[k] = acc;
                }
            }
        }
        if self.wants(w_ih) {
            let mut dwi = vec![0.0; d * four_h];
            gemm(d, l, four_h, xv.data(), true, &dpre_all, false, &mut dwi, false);
            self.accum(grads, w_ih, DenseArray::new(wi.shape().to_vec(), dwi)?);
        }
        if self.wants(w_hh) {
            self.accum(grads, w_hh, DenseArray::new(wh.shape().to_vec(), dwh)?);
        }
        if self.wants(bias) {
            let mut db = vec![0.0; four_h];
            for row in dpre_all.chunks(four_h) {
                for (b, v) in db.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let bshape = self.value(bias).shape().to_vec();
            self.accum(grads, bias, DenseArray::new(bshape, db)?);
        }
        if self.wants(x) {
            let mut dx = vec![0.0; l * d];
            gemm(l, four_h, d, &dpre_all, false, wi.data(), true, &mut dx, false);
            self.accum(grads, x, DenseArray::new(vec![l, d], dx)?);
        }
        Ok(())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Unfolds an `l×c` sequence into `l×(w·c)` rows of zero-padded neighbourhoods.
fn im2col(x: &[f64], l: usize, c: usize, w: usize) -> Vec<f64> {
    let pad = w / 2;
    let mut cols = vec![0.0; l * w * c];
    for t in 0..l {
        for s in 0..w {
            let src = t + s;
            if src < pad || src - pad >= l {
                continue;
            }
            let src = src - pad;
            let dst = t * w * c + s * c;
            cols[dst..dst + c].copy_from_slice(&x[src * c..(src + 1) * c]);
        }
    }
    cols
}

fn col2im(cols: &[f64], l: usize, c: usize, w: usize) -> Vec<f64> {
    let pad = w / 2;
    let mut x = vec![0.0; l * c];
    for t in 0..l {
        for s in 0..w {
            let src = t + s;
            if src < pad || src - pad >= l {
                continue;
            }
            let src = src - pad;
            let from = t * w * c + s * c;
            for (xv, cv) in x[src * c..(src + 1) * c].iter_mut().zip(&cols[from..from + c]) {
                *xv += cv;
            }
        }
    }
    x
}
