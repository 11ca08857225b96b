//! Computation tape: define-by-run op recording and reverse-mode backward.
//!
//! Nodes are appended in execution order, so the recorded list is already a
//! topological order and the backward pass is a single reverse sweep. Ops
//! whose inputs carry no gradient are folded to constants and never recorded.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::Tensor;
use crate::error::{contract, CoreError, Result};
use crate::{math, Real};

/// Inputs to `log` are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
pub const LOG_CLAMP: Real = 1e-7;
/// Batch-norm variance epsilon.
pub const BN_EPSILON: Real = 1e-5;
/// Batch-norm running-statistics decay.
pub const BN_DECAY: Real = 0.99;

/// Handle to a value node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Batch statistics produced by a training-mode batch norm, for updating
/// running buffers outside the tape.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
}

/// Sparse aggregation plan for one kernel-point convolution: per kernel
/// point, the (output row, support row, influence) triples with nonzero
/// influence.
#[derive(Debug, Clone)]
pub struct KpConvPlan {
    pub n_out: usize,
    pub kernel_points: usize,
    pub entries: Vec<Vec<(u32, u32, Real)>>,
}

enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: Real },
    AddScalar { x: NodeId },
    AddRowBroadcast { x: NodeId, bias: NodeId },
    Concat { xs: Vec<NodeId>, widths: Vec<usize> },
    SliceColumn { x: NodeId, col: usize },
    GatherRows { x: NodeId, idx: Rc<Vec<u32>> },
    ScatterAddRows { x: NodeId, idx: Rc<Vec<u32>> },
    ScaleRows { x: NodeId, w: Rc<Vec<Real>> },
    LeakyRelu { x: NodeId, slope: Real },
    SoftmaxRows { x: NodeId },
    Sigmoid { x: NodeId },
    Log { x: NodeId },
    Abs { x: NodeId },
    Sum { x: NodeId },
    MeanGroups { x: NodeId, groups: Rc<Vec<Vec<u32>>> },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<Real>, invstd: Vec<Real> },
    Clamp01 { x: NodeId },
    KpConv { features: NodeId, weights: NodeId, plan: Rc<KpConvPlan> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<Real>>,
}

/// The computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a constant leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Rc::new(value), Op::Leaf, false)
    }

    /// Register a leaf sharing existing storage, optionally tracked.
    pub fn leaf_shared(&mut self, value: Rc<Tensor>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.idx()].value
    }

    pub fn value_rc(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes[id.idx()].value)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].requires_grad
    }

    /// Gradient accumulated by the latest backward pass, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[Real]> {
        self.nodes[id.idx()].grad.as_deref()
    }

    fn push(&mut self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        // Constant folding: untracked results need no backward rule.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        id
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.idx()].requires_grad)
    }

    fn shape_err(op: &'static str, detail: alloc::string::String) -> CoreError {
        CoreError::ShapeMismatch { op, detail }
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// a (m×k) @ b (k×n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = (tb.rows(), tb.cols());
        if k != kb {
            return Err(Self::shape_err(
                "matmul",
                format!("{:?} @ {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(ta.data(), tb.data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Rc::new(t), Op::Matmul { a, b }, rg))
    }

    /// Element-wise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Rc::new(t), Op::Add { a, b }, rg))
    }

    /// Element-wise product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Rc::new(t), Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: Real) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| c * v).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::Scale { x, c }, rg))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: Real) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v + c).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::AddScalar { x }, rg))
    }

    /// x (n×c) + bias (c) broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (n, c) = (tx.rows(), tx.cols());
        if tb.numel() != c {
            return Err(Self::shape_err(
                "add_row_broadcast",
                format!("{:?} + bias {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut data = tx.data().to_vec();
        for r in 0..n {
            for (v, &b) in data[r * c..(r + 1) * c].iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let t = Tensor::matrix(n, c, data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Rc::new(t), Op::AddRowBroadcast { x, bias }, rg))
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        contract!(!xs.is_empty(), "concat of zero tensors");
        let n = self.value(xs[0]).rows();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let t = self.value(x);
            if t.rows() != n {
                return Err(Self::shape_err(
                    "concat",
                    format!("row counts differ: {} vs {}", n, t.rows()),
                ));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let t = self.value(x);
            for r in 0..n {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::matrix(n, total, data)?;
        let rg = self.rg(xs);
        Ok(self.push(Rc::new(t), Op::Concat { xs: xs.to_vec(), widths }, rg))
    }

    /// Single column of a matrix, as n×1.
    pub fn slice_column(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        if col >= c {
            return Err(Self::shape_err(
                "slice_column",
                format!("column {col} of {:?}", tx.shape()),
            ));
        }
        let data = (0..n).map(|r| tx.at(r, col)).collect();
        let t = Tensor::matrix(n, 1, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::SliceColumn { x, col }, rg))
    }

    /// out[r] = x[idx[r]].
    pub fn gather_rows(&mut self, x: NodeId, idx: Rc<Vec<u32>>) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        for &i in idx.iter() {
            contract!((i as usize) < n, "gather index {i} out of {n} rows");
        }
        let mut data = vec![0.0; idx.len() * c];
        for (r, &i) in idx.iter().enumerate() {
            data[r * c..(r + 1) * c].copy_from_slice(&tx.data()[i as usize * c..(i as usize + 1) * c]);
        }
        let t = Tensor::matrix(idx.len(), c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::GatherRows { x, idx }, rg))
    }

    /// out[idx[r]] += x[r], with `out_rows` output rows.
    pub fn scatter_add_rows(&mut self, x: NodeId, idx: Rc<Vec<u32>>, out_rows: usize) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        if idx.len() != n {
            return Err(Self::shape_err(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), n),
            ));
        }
        for &i in idx.iter() {
            contract!((i as usize) < out_rows, "scatter index {i} out of {out_rows} rows");
        }
        let mut data = vec![0.0; out_rows * c];
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in data[i as usize * c..(i as usize + 1) * c]
                .iter_mut()
                .zip(&tx.data()[r * c..(r + 1) * c])
            {
                *o += v;
            }
        }
        let t = Tensor::matrix(out_rows, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::ScatterAddRows { x, idx }, rg))
    }

    /// Multiply each row by a fixed scalar weight.
    pub fn scale_rows(&mut self, x: NodeId, w: Rc<Vec<Real>>) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        if w.len() != n {
            return Err(Self::shape_err(
                "scale_rows",
                format!("{} weights for {} rows", w.len(), n),
            ));
        }
        let mut data = tx.data().to_vec();
        for (r, &wr) in w.iter().enumerate() {
            for v in data[r * c..(r + 1) * c].iter_mut() {
                *v *= wr;
            }
        }
        let t = Tensor::matrix(n, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::ScaleRows { x, w }, rg))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: Real) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::LeakyRelu { x, slope }, rg))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        let mut data = tx.data().to_vec();
        kernels::softmax_rows_inplace(&mut data, n, c);
        let t = Tensor::matrix(n, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::SoftmaxRows { x }, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| math::sigmoid(v)).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::Sigmoid { x }, rg))
    }

    /// Natural log with inputs clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| math::ln(v.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)))
            .collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::Log { x }, rg))
    }

    /// |x|; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| math::abs(v)).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::Abs { x }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: Real = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(Tensor::scalar(total)), Op::Sum { x }, rg))
    }

    /// Row means over index groups: out[g] = mean of x rows in groups[g].
    pub fn mean_groups(&mut self, x: NodeId, groups: Rc<Vec<Vec<u32>>>) -> Result<NodeId> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        let mut data = vec![0.0; groups.len() * c];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(CoreError::DegenerateGroup { op: "mean_over_index_groups", group: g });
            }
            for &q in members {
                contract!((q as usize) < n, "group index {q} out of {n} rows");
                for (o, &v) in data[g * c..(g + 1) * c]
                    .iter_mut()
                    .zip(&tx.data()[q as usize * c..(q as usize + 1) * c])
                {
                    *o += v;
                }
            }
            let inv = 1.0 / members.len() as Real;
            for v in data[g * c..(g + 1) * c].iter_mut() {
                *v *= inv;
            }
        }
        let t = Tensor::matrix(groups.len(), c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::MeanGroups { x, groups }, rg))
    }

    /// Training-mode batch norm over all rows, per channel, with learned
    /// scale/offset. Returns the batch statistics for running-stat updates.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(NodeId, BnStats)> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, c) = (tx.rows(), tx.cols());
        if tg.numel() != c || tb.numel() != c {
            return Err(Self::shape_err(
                "batch_norm",
                format!("{:?} with gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            ));
        }
        contract!(n > 0, "batch_norm over zero rows");
        let (mean, var) = kernels::channel_stats(tx.data(), n, c);
        let invstd: Vec<Real> = var.iter().map(|&v| 1.0 / math::sqrt(v + BN_EPSILON)).collect();
        let mut data = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                let xhat = (tx.at(r, j) - mean[j]) * invstd[j];
                data[r * c + j] = tg.data()[j] * xhat + tb.data()[j];
            }
        }
        let t = Tensor::matrix(n, c, data)?;
        let rg = self.rg(&[x, gamma, beta]);
        let stats = BnStats { mean: mean.clone(), var };
        let id = self.push(Rc::new(t), Op::BatchNorm { x, gamma, beta, mean, invstd }, rg);
        Ok((id, stats))
    }

    /// Clamp values into [0, 1].
    pub fn clamp01(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        let t = Tensor::from_vec(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Rc::new(t), Op::Clamp01 { x }, rg))
    }

    /// Kernel-point convolution: out[p] = Σ_i Σ_{(p,q,h)} h · f[q] · W_i.
    ///
    /// `weights` has shape [kernel_points, c_in, c_out].
    pub fn kpconv(&mut self, features: NodeId, weights: NodeId, plan: Rc<KpConvPlan>) -> Result<NodeId> {
        let (tf, tw) = (self.value(features), self.value(weights));
        let c_in = tf.cols();
        if tw.shape() != [plan.kernel_points, c_in, tw.shape().last().copied().unwrap_or(0)]
            || tw.shape().len() != 3
        {
            return Err(Self::shape_err(
                "kpconv",
                format!(
                    "weights {:?} for {} kernel points and {c_in} input channels",
                    tw.shape(),
                    plan.kernel_points
                ),
            ));
        }
        let c_out = tw.shape()[2];
        let s = tf.rows();
        let mut out = vec![0.0; plan.n_out * c_out];
        let mut scratch = vec![0.0; plan.n_out * c_in];
        for (i, entries) in plan.entries.iter().enumerate() {
            if entries.is_empty() {
                continue;
            }
            scratch.iter_mut().for_each(|v| *v = 0.0);
            for &(p, q, h) in entries {
                debug_assert!((p as usize) < plan.n_out && (q as usize) < s);
                let src = &tf.data()[q as usize * c_in..(q as usize + 1) * c_in];
                let dst = &mut scratch[p as usize * c_in..(p as usize + 1) * c_in];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += h * v;
                }
            }
            let w_i = &tw.data()[i * c_in * c_out..(i + 1) * c_in * c_out];
            kernels::matmul(&scratch, w_i, &mut out, plan.n_out, c_in, c_out);
        }
        let t = Tensor::matrix(plan.n_out, c_out, out)?;
        let rg = self.rg(&[features, weights]);
        Ok(self.push(Rc::new(t), Op::KpConv { features, weights, plan }, rg))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; fills `grad` on every tracked node
    /// and clears the recorded ops.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        contract!(self.value(loss).is_scalar(), "backward needs a scalar loss");
        let recorded = self.nodes.iter().any(|n| !matches!(n.op, Op::Leaf));
        contract!(recorded, "backward on an empty tape");

        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        grads[loss.idx()] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let d_out = rest[0].as_ref().expect("checked above").clone();
            self.backward_op(i, &d_out, before);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad { g } else { None };
            node.op = Op::Leaf;
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<Real>>], id: NodeId, f: impl FnOnce(&mut [Real])) {
        let node = &self.nodes[id.idx()];
        if !node.requires_grad {
            return;
        }
        let slot = grads[id.idx()].get_or_insert_with(|| vec![0.0; node.value.numel()]);
        f(slot);
    }

    fn backward_op(&self, i: usize, d_out: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let out_val = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[a.idx()].value, &self.nodes[b.idx()].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                self.acc(grads, *a, |g| kernels::matmul_nt(d_out, tb.data(), g, m, n, k));
                self.acc(grads, *b, |g| kernels::matmul_tn(ta.data(), d_out, g, m, k, n));
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(d_out).for_each(|(v, &d)| *v += d);
                });
                self.acc(grads, *b, |g| {
                    g.iter_mut().zip(d_out).for_each(|(v, &d)| *v += d);
                });
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (&self.nodes[a.idx()].value, &self.nodes[b.idx()].value);
                self.acc(grads, *a, |g| {
                    for ((v, &d), &y) in g.iter_mut().zip(d_out).zip(tb.data()) {
                        *v += d * y;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((v, &d), &x) in g.iter_mut().zip(d_out).zip(ta.data()) {
                        *v += d * x;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.acc(grads, *x, |g| {
                    g.iter_mut().zip(d_out).for_each(|(v, &d)| *v += c * d);
                });
            }
            Op::AddScalar { x } => {
                self.acc(grads, *x, |g| {
                    g.iter_mut().zip(d_out).for_each(|(v, &d)| *v += d);
                });
            }
            Op::AddRowBroadcast { x, bias } => {
                let c = self.nodes[bias.idx()].value.numel();
                let n = d_out.len() / c;
                self.acc(grads, *x, |g| {
                    g.iter_mut().zip(d_out).for_each(|(v, &d)| *v += d);
                });
                self.acc(grads, *bias, |g| {
                    for r in 0..n {
                        for (v, &d) in g.iter_mut().zip(&d_out[r * c..(r + 1) * c]) {
                            *v += d;
                        }
                    }
                });
            }
            Op::Concat { xs, widths } => {
                let total: usize = widths.iter().sum();
                let n = d_out.len() / total;
                let mut off = 0;
                for (&x, &w) in xs.iter().zip(widths) {
                    self.acc(grads, x, |g| {
                        for r in 0..n {
                            for (v, &d) in g[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&d_out[r * total + off..r * total + off + w])
                            {
                                *v += d;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceColumn { x, col } => {
                let c = self.nodes[x.idx()].value.cols();
                let col = *col;
                self.acc(grads, *x, |g| {
                    for (r, &d) in d_out.iter().enumerate() {
                        g[r * c + col] += d;
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let c = self.nodes[x.idx()].value.cols();
                self.acc(grads, *x, |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (v, &d) in g[i as usize * c..(i as usize + 1) * c]
                            .iter_mut()
                            .zip(&d_out[r * c..(r + 1) * c])
                        {
                            *v += d;
                        }
                    }
                });
            }
            Op::ScatterAddRows { x, idx } => {
                let c = self.nodes[x.idx()].value.cols();
                self.acc(grads, *x, |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (v, &d) in g[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&d_out[i as usize * c..(i as usize + 1) * c])
                        {
                            *v += d;
                        }
                    }
                });
            }
            Op::ScaleRows { x, w } => {
                let c = self.nodes[x.idx()].value.cols();
                self.acc(grads, *x, |g| {
                    for (r, &wr) in w.iter().enumerate() {
                        for (v, &d) in g[r * c..(r + 1) * c].iter_mut().zip(&d_out[r * c..(r + 1) * c]) {
                            *v += wr * d;
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let tx = &self.nodes[x.idx()].value;
                let slope = *slope;
                self.acc(grads, *x, |g| {
                    for ((v, &d), &xv) in g.iter_mut().zip(d_out).zip(tx.data()) {
                        *v += d * if xv > 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let (n, c) = (out_val.rows(), out_val.cols());
                let y = out_val.data();
                self.acc(grads, *x, |g| {
                    for r in 0..n {
                        let y_row = &y[r * c..(r + 1) * c];
                        let d_row = &d_out[r * c..(r + 1) * c];
                        let dot: Real = y_row.iter().zip(d_row).map(|(&a, &b)| a * b).sum();
                        for ((v, &yv), &dv) in g[r * c..(r + 1) * c].iter_mut().zip(y_row).zip(d_row) {
                            *v += yv * (dv - dot);
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = out_val.data();
                self.acc(grads, *x, |g| {
                    for ((v, &d), &yv) in g.iter_mut().zip(d_out).zip(y) {
                        *v += d * yv * (1.0 - yv);
                    }
                });
            }
            Op::Log { x } => {
                let tx = &self.nodes[x.idx()].value;
                self.acc(grads, *x, |g| {
                    for ((v, &d), &xv) in g.iter_mut().zip(d_out).zip(tx.data()) {
                        if (LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&xv) {
                            *v += d / xv;
                        }
                    }
                });
            }
            Op::Abs { x } => {
                let tx = &self.nodes[x.idx()].value;
                self.acc(grads, *x, |g| {
                    for ((v, &d), &xv) in g.iter_mut().zip(d_out).zip(tx.data()) {
                        if xv > 0.0 {
                            *v += d;
                        } else if xv < 0.0 {
                            *v -= d;
                        }
                    }
                });
            }
            Op::Sum { x } => {
                let d = d_out[0];
                self.acc(grads, *x, |g| {
                    g.iter_mut().for_each(|v| *v += d);
                });
            }
            Op::MeanGroups { x, groups } => {
                let c = self.nodes[x.idx()].value.cols();
                self.acc(grads, *x, |g| {
                    for (p, members) in groups.iter().enumerate() {
                        let w = 1.0 / members.len() as Real;
                        for &q in members {
                            for (v, &d) in g[q as usize * c..(q as usize + 1) * c]
                                .iter_mut()
                                .zip(&d_out[p * c..(p + 1) * c])
                            {
                                *v += w * d;
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd } => {
                let tx = &self.nodes[x.idx()].value;
                let tg = &self.nodes[gamma.idx()].value;
                let (n, c) = (tx.rows(), tx.cols());
                let inv_n = 1.0 / n as Real;
                // xhat and the per-channel reductions of dxhat.
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                let mut xhat = vec![0.0; n * c];
                for r in 0..n {
                    for j in 0..c {
                        let xh = (tx.at(r, j) - mean[j]) * invstd[j];
                        let dxh = d_out[r * c + j] * tg.data()[j];
                        xhat[r * c + j] = xh;
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xh;
                    }
                }
                self.acc(grads, *x, |g| {
                    for r in 0..n {
                        for j in 0..c {
                            let dxh = d_out[r * c + j] * tg.data()[j];
                            g[r * c + j] += invstd[j]
                                * (dxh
                                    - inv_n * sum_dxhat[j]
                                    - xhat[r * c + j] * inv_n * sum_dxhat_xhat[j]);
                        }
                    }
                });
                self.acc(grads, *gamma, |g| {
                    for r in 0..n {
                        for j in 0..c {
                            g[j] += d_out[r * c + j] * xhat[r * c + j];
                        }
                    }
                });
                self.acc(grads, *beta, |g| {
                    for r in 0..n {
                        for (v, &d) in g.iter_mut().zip(&d_out[r * c..(r + 1) * c]) {
                            *v += d;
                        }
                    }
                });
            }
            Op::Clamp01 { x } => {
                let tx = &self.nodes[x.idx()].value;
                self.acc(grads, *x, |g| {
                    for ((v, &d), &xv) in g.iter_mut().zip(d_out).zip(tx.data()) {
                        if (0.0..=1.0).contains(&xv) {
                            *v += d;
                        }
                    }
                });
            }
            Op::KpConv { features, weights, plan } => {
                let tf = &self.nodes[features.idx()].value;
                let tw = &self.nodes[weights.idx()].value;
                let c_in = tf.cols();
                let c_out = tw.shape()[2];
                let want_df = self.nodes[features.idx()].requires_grad;
                let want_dw = self.nodes[weights.idx()].requires_grad;
                let mut scratch = vec![0.0; plan.n_out * c_in];
                let mut d_sup = vec![0.0; plan.n_out * c_in];
                for (i, entries) in plan.entries.iter().enumerate() {
                    if entries.is_empty() {
                        continue;
                    }
                    let w_i = &tw.data()[i * c_in * c_out..(i + 1) * c_in * c_out];
                    if want_dw {
                        // Rebuild the aggregated support features for this kernel point.
                        scratch.iter_mut().for_each(|v| *v = 0.0);
                        for &(p, q, h) in entries {
                            let src = &tf.data()[q as usize * c_in..(q as usize + 1) * c_in];
                            let dst = &mut scratch[p as usize * c_in..(p as usize + 1) * c_in];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d += h * v;
                            }
                        }
                        self.acc(grads, *weights, |g| {
                            kernels::matmul_tn(
                                &scratch,
                                d_out,
                                &mut g[i * c_in * c_out..(i + 1) * c_in * c_out],
                                plan.n_out,
                                c_in,
                                c_out,
                            );
                        });
                    }
                    if want_df {
                        d_sup.iter_mut().for_each(|v| *v = 0.0);
                        kernels::matmul_nt(d_out, w_i, &mut d_sup, plan.n_out, c_out, c_in);
                        self.acc(grads, *features, |g| {
                            for &(p, q, h) in entries {
                                let src = &d_sup[p as usize * c_in..(p as usize + 1) * c_in];
                                let dst = &mut g[q as usize * c_in..(q as usize + 1) * c_in];
                                for (d, &v) in dst.iter_mut().zip(src) {
                                    *d += h * v;
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph() -> Graph {
        Graph::new()
    }

    #[test]
    fn softmax_symmetric_row() {
        let mut g = scalar_graph();
        let x = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = scalar_graph();
        let x = g.leaf(Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap());
        let y = g.leaky_relu(x, 0.1).unwrap();
        assert_eq!(g.value(y).data(), &[-0.1, 2.0]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = scalar_graph();
        let x = g.leaf_shared(Rc::new(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap()), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_backward_at_zero() {
        let mut g = scalar_graph();
        let x = g.leaf_shared(Rc::new(Tensor::scalar(0.0)), true);
        let y = g.sigmoid(x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<Real> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<Real> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Independent oracle: naive triple loop.
        let mut expect = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for l in 0..4 {
                    expect[i * 2 + j] += a[i * 4 + l] * b[l * 2 + j];
                }
            }
        }
        let mut g = scalar_graph();
        let na = g.leaf(Tensor::matrix(3, 4, a).unwrap());
        let nb = g.leaf(Tensor::matrix(4, 2, b).unwrap());
        let nc = g.matmul(na, nb).unwrap();
        for (got, want) in g.value(nc).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut g = scalar_graph();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        match err {
            CoreError::ShapeMismatch { op, .. } => assert_eq!(op, "matmul"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn scatter_then_gather_identity() {
        let mut g = scalar_graph();
        let x = g.leaf(Tensor::matrix(4, 2, (0..8).map(|v| v as Real).collect()).unwrap());
        let idx = Rc::new(vec![0u32, 1, 2, 3]);
        let s = g.scatter_add_rows(x, idx.clone(), 4).unwrap();
        let back = g.gather_rows(s, idx).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn empty_group_is_degenerate() {
        let mut g = scalar_graph();
        let x = g.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let groups = Rc::new(vec![vec![0u32], vec![]]);
        let err = g.mean_groups(x, groups).unwrap_err();
        assert!(matches!(err, CoreError::DegenerateGroup { group: 1, .. }));
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut g = scalar_graph();
        let x = g.leaf_shared(Rc::new(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()), true);
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(CoreError::Contract(_))));
    }

    #[test]
    fn backward_clears_tape() {
        let mut g = scalar_graph();
        let x = g.leaf_shared(Rc::new(Tensor::scalar(1.5)), true);
        let y = g.scale(x, 2.0).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        // A second sweep finds no recorded ops.
        assert!(matches!(g.backward(y), Err(CoreError::Contract(_))));
    }

    #[test]
    fn softmax_rows_nonnegative_sum_to_one() {
        let mut g = scalar_graph();
        let x = g.leaf(Tensor::matrix(3, 4, (0..12).map(|v| (v as Real) * 0.3 - 2.0).collect()).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let t = g.value(y);
        for r in 0..3 {
            let row = &t.data()[r * 4..(r + 1) * 4];
            assert!(row.iter().all(|&v| v >= 0.0));
            let s: Real = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
