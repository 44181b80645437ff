//! Wengert-list reverse-mode autodiff.
//!
//! Every operation evaluates eagerly and appends one node. `backward` walks the
//! list in reverse and leaves gradients on the `requires_grad` leaves. Nodes are
//! tagged with the block (layer, head, ...) that was active when they were
//! recorded, so callers can count how many blocks hold activations for backward.

use std::collections::BTreeSet;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Mul,
    Scale(f64),
    Gelu,
    Transpose,
    LayerNorm { mean: Vec<f64>, rstd: Vec<f64> },
    Softmax,
    CausalSoftmax,
    SliceCols { start: usize },
    ConcatCols,
    Gather { ids: Vec<usize> },
    CrossEntropy { targets: Vec<usize>, probs: Vec<f64> },
    Sum,
    Mean,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    needs_grad: bool,
    block: Option<u32>,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
    block: Option<u32>,
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

    /// Drops every node recorded after `mark` (a previous `len()`).
    pub fn truncate(&mut self, mark: usize) {
        self.values.truncate(mark);
        self.nodes.truncate(mark);
    }

    /// Tag subsequent nodes with `block`.
    pub fn set_block(&mut self, block: Option<u32>) {
        self.block = block;
    }

    pub fn current_block(&self) -> Option<u32> {
        self.block
    }

    /// Number of distinct blocks that recorded at least one differentiable
    /// intermediate, i.e. whose activations stay alive until `backward`.
    pub fn retained_blocks(&self) -> usize {
        self.retained_block_ids().len()
    }

    pub fn retained_block_ids(&self) -> BTreeSet<u32> {
        self.nodes
            .iter()
            .filter(|n| n.needs_grad && !matches!(n.op, Op::Leaf))
            .filter_map(|n| n.block)
            .collect()
    }

    /// Registers a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        t.set_grad(None);
        self.push(t, Op::Leaf, Vec::new(), needs_grad)
    }

    /// Differentiable leaves in the order they were registered.
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.needs_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.values[v.0].grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.values[v.0], Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>, needs_grad: bool) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            op,
            inputs,
            needs_grad,
            block: self.block,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.values[v.0].dims2()
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: Vec<Var>) -> Result<Var> {
        let needs_grad = self.any_grad(&inputs);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, op, inputs, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.record(vec![m, n], out, Op::MatMul, vec![a, b])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what} needs equal shapes, got {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        self.record(self.value(a).shape().to_vec(), out, Op::Add, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        self.record(self.value(a).shape().to_vec(), out, Op::Mul, vec![a, b])
    }

    /// Adds a length-`n` row vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x)?;
        if self.value(bias).numel() != n {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} does not broadcast over {:?}",
                self.value(bias).shape(),
                self.value(x).shape()
            )));
        }
        let b = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|r| r.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        self.record(self.value(x).shape().to_vec(), out, Op::AddRow, vec![x, bias])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).data().iter().map(|v| v * c).collect();
        self.record(self.value(x).shape().to_vec(), out, Op::Scale(c), vec![x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        self.record(self.value(x).shape().to_vec(), out, Op::Gelu, vec![x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.record(vec![n, m], out, Op::Transpose, vec![x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::Dimension(format!(
                "layer norm parameters must have {n} entries"
            )));
        }
        let mut out = vec![0.0; m * n];
        let (mean, rstd) = kernels::layer_norm_rows(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            &mut out,
            n,
        );
        self.record(vec![m, n], out, Op::LayerNorm { mean, rstd }, vec![x, gain, bias])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).last_dim();
        let mut out = self.value(x).data().to_vec();
        kernels::softmax_rows(&mut out, cols);
        self.record(self.value(x).shape().to_vec(), out, Op::Softmax, vec![x])
    }

    /// Softmax of a square score matrix under a causal (lower-triangular) mask.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if m != n {
            return Err(Error::Dimension(format!("causal softmax needs a square matrix, got {m}x{n}")));
        }
        let mut out = self.value(x).data().to_vec();
        kernels::causal_softmax_rows(&mut out, n);
        self.record(vec![n, n], out, Op::CausalSoftmax, vec![x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if width == 0 || start + width > n {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} out of bounds for width {n}",
                start + width
            )));
        }
        let src = self.value(x).data();
        let out = (0..m).flat_map(|i| src[i * n + start..i * n + start + width].iter().copied()).collect();
        self.record(vec![m, width], out, Op::SliceCols { start }, vec![x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let (m, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p)?;
            if pm != m {
                return Err(Error::Dimension(format!("concat row counts differ: {pm} vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.record(vec![m, total], out, Op::ConcatCols, parts.to_vec())
    }

    /// Selects rows of a `V x d` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("row {bad} out of range for table of {v} rows")));
        }
        if ids.is_empty() {
            return Err(Error::Dimension("gather of zero rows".into()));
        }
        let src = self.value(table).data();
        let out = ids.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect();
        self.record(vec![ids.len(), d], out, Op::Gather { ids: ids.to_vec() }, vec![table])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.dims2(logits)?;
        if targets.len() != n {
            return Err(Error::Dimension(format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index(format!("target {bad} out of range for {v} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        kernels::softmax_rows(&mut probs, v);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| log_prob(self.value(logits).row(i), t))
            .sum::<f64>()
            / n as f64;
        self.record(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                targets: targets.to_vec(),
                probs,
            },
            vec![logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.record(vec![1], vec![s], Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.record(vec![1], vec![s], Op::Mean, vec![x])
    }

    /// Reverse pass from a scalar `loss`. Afterwards every differentiable leaf
    /// that the loss depends on carries a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        for v in &mut self.values {
            v.set_grad(None);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Leaf) = (g, &self.nodes[idx].op) {
                if self.values[idx].requires_grad() {
                    self.values[idx].set_grad(Some(g));
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let out = &self.values[idx];

        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (ins[0], ins[1]);
                let (m, k) = self.values[a.0].dims2().expect("2-D");
                let n = self.values[b.0].dims2().expect("2-D").1;
                if wants(a) {
                    let ga = slot(grads, a, m * k);
                    kernels::gemm(m, n, k, g, false, self.values[b.0].data(), true, ga, 1.0);
                }
                if wants(b) {
                    let gb = slot(grads, b, k * n);
                    kernels::gemm(k, m, n, self.values[a.0].data(), true, g, false, gb, 1.0);
                }
            }
            Op::Add => {
                for &v in ins {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), g, 1.0);
                    }
                }
            }
            Op::AddRow => {
                let (x, bias) = (ins[0], ins[1]);
                let n = out.last_dim();
                if wants(x) {
                    axpy(slot(grads, x, g.len()), g, 1.0);
                }
                if wants(bias) {
                    let gb = slot(grads, bias, n);
                    for row in g.chunks_exact(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                if wants(a) {
                    let bv = self.values[b.0].data();
                    for ((o, gv), bv) in slot(grads, a, g.len()).iter_mut().zip(g).zip(bv) {
                        *o += gv * bv;
                    }
                }
                if wants(b) {
                    let av = self.values[a.0].data();
                    for ((o, gv), av) in slot(grads, b, g.len()).iter_mut().zip(g).zip(av) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(c) => {
                if wants(ins[0]) {
                    axpy(slot(grads, ins[0], g.len()), g, *c);
                }
            }
            Op::Gelu => {
                let x = ins[0];
                if wants(x) {
                    let xv = self.values[x.0].data();
                    for ((o, gv), &xv) in slot(grads, x, g.len()).iter_mut().zip(g).zip(xv) {
                        *o += gv * kernels::gelu_grad(xv);
                    }
                }
            }
            Op::Transpose => {
                let x = ins[0];
                if wants(x) {
                    let (m, n) = self.values[x.0].dims2().expect("2-D");
                    let gx = slot(grads, x, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::LayerNorm { mean, rstd } => {
                let (x, gain, bias) = (ins[0], ins[1], ins[2]);
                let n = out.last_dim();
                let xv = self.values[x.0].data();
                let gam = self.values[gain.0].data();
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                let mut gx = vec![0.0; xv.len()];
                let mut xhat = vec![0.0; n];
                let mut gxhat = vec![0.0; n];
                for (r, (xr, gr)) in xv.chunks_exact(n).zip(g.chunks_exact(n)).enumerate() {
                    for j in 0..n {
                        xhat[j] = (xr[j] - mean[r]) * rstd[r];
                        gxhat[j] = gr[j] * gam[j];
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                    let mg = gxhat.iter().sum::<f64>() / n as f64;
                    let mgx = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[r * n + j] = rstd[r] * (gxhat[j] - mg - xhat[j] * mgx);
                    }
                }
                if wants(x) {
                    axpy(slot(grads, x, gx.len()), &gx, 1.0);
                }
                if wants(gain) {
                    axpy(slot(grads, gain, n), &ggain, 1.0);
                }
                if wants(bias) {
                    axpy(slot(grads, bias, n), &gbias, 1.0);
                }
            }
            Op::Softmax | Op::CausalSoftmax => {
                let x = ins[0];
                if wants(x) {
                    let cols = out.last_dim();
                    kernels::softmax_rows_backward(out.data(), g, slot(grads, x, g.len()), cols);
                }
            }
            Op::SliceCols { start } => {
                let x = ins[0];
                if wants(x) {
                    let (m, n) = self.values[x.0].dims2().expect("2-D");
                    let w = out.last_dim();
                    let gx = slot(grads, x, m * n);
                    for i in 0..m {
                        axpy(&mut gx[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w], 1.0);
                    }
                }
            }
            Op::ConcatCols => {
                let total = out.last_dim();
                let m = out.shape()[0];
                let mut offset = 0;
                for &p in ins {
                    let w = self.values[p.0].last_dim();
                    if wants(p) {
                        let gp = slot(grads, p, m * w);
                        for i in 0..m {
                            axpy(&mut gp[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w], 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::Gather { ids } => {
                let table = ins[0];
                if wants(table) {
                    let d = out.last_dim();
                    let len = self.values[table.0].numel();
                    let gt = slot(grads, table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            Op::CrossEntropy { targets, probs } => {
                let logits = ins[0];
                if wants(logits) {
                    let v = self.values[logits.0].last_dim();
                    let n = targets.len() as f64;
                    let c = g[0] / n;
                    let gl = slot(grads, logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * v + j] += c * (probs[r * v + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum | Op::Mean => {
                let x = ins[0];
                if wants(x) {
                    let len = self.values[x.0].numel();
                    let c = if matches!(node.op, Op::Mean) { g[0] / len as f64 } else { g[0] };
                    for o in slot(grads, x, len) {
                        *o += c;
                    }
                }
            }
        }
    }
}

/// `log softmax(row)[target]`, stable.
pub fn log_prob(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[target] - lse
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &mut Tape, loss: Var) -> Result<()> {
    tape.backward(loss)
}
