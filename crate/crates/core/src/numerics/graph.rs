//! Eager computation graph with reverse-mode gradients.
//!
//! Every operation computes its value immediately and appends a node; the
//! insertion order is a topological order, so [`Graph::backward`] simply
//! walks the node list in reverse. Trainable parameters enter the graph as
//! borrowed leaves and are reported by name.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradient per parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Log(Var),
    Softmax(Var),
    Sum(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<u32>,
    },
    MaxAxis0 {
        input: Var,
        arg: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_valid: Vec<bool>,
        probs: Vec<f32>,
    },
    MapSum {
        input: Var,
        local_grad: Vec<f32>,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    param: Option<String>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a trainable parameter leaf.
    pub fn param(&mut self, name: impl Into<String>, value: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            param: Some(name.into()),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Broadcast-add a `1×n` row (typically a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = kernels::add_row(self.value(a), self.value(row))?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out = kernels::scale(self.value(a), c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = kernels::sigmoid(self.value(a));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = kernels::tanh(self.value(a));
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = kernels::gelu(self.value(a));
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = kernels::log(self.value(a))?;
        Ok(self.push(out, Op::Log(a), &[a]))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = kernels::sum(self.value(a));
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat(&values, axis)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let out = kernels::slice(self.value(a), axis, start, end)?;
        Ok(self.push(out, Op::Slice { input: a, axis, start }, &[a]))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let out = kernels::gather_rows(self.value(table), ids)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Column-wise max over rows (`r×c → 1×c`).
    pub fn max_axis0(&mut self, a: Var) -> Result<Var> {
        let (out, arg) = kernels::max_axis0(self.value(a))?;
        Ok(self.push(out, Op::MaxAxis0 { input: a, arg }, &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, xhat, inv_std) = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_valid: &[bool]) -> Result<Var> {
        let (out, probs) = kernels::attention(self.value(q), self.value(k), self.value(v), heads, key_valid)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                key_valid: key_valid.to_vec(),
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Scalar `Σ f(i, x_i)` where `f` returns the per-element value and its
    /// derivative with respect to `x_i`. Accumulated in `f64`.
    pub fn map_sum(&mut self, a: Var, f: impl Fn(usize, f32) -> (f64, f64)) -> Result<Var> {
        let mut total = 0.0f64;
        let mut local_grad = Vec::with_capacity(self.value(a).len());
        for (i, &x) in self.value(a).data().iter().enumerate() {
            let (v, d) = f(i, x);
            if !v.is_finite() || !d.is_finite() {
                return Err(Error::NonFinite(format!(
                    "map_sum element {i}: value {v}, derivative {d}"
                )));
            }
            total += v;
            local_grad.push(d as f32);
        }
        Ok(self.push(Tensor::scalar(total as f32), Op::MapSum { input: a, local_grad }, &[a]))
    }

    /// Gradients of the scalar `loss` with respect to every registered
    /// parameter. Parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            self.propagate(idx, &upstream, &mut grads);
        }

        let mut out = Gradients::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.get_mut(name) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &*node.value;
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = out.shape()[1];
                if self.wants(*a) {
                    let b_data = self.value(*b).data();
                    gemm_into(self.slot(*a, grads), |dst| kernels::gemm_nt(g, b_data, dst, m, n, k));
                }
                if self.wants(*b) {
                    let a_data = self.value(*a).data();
                    gemm_into(self.slot(*b, grads), |dst| kernels::gemm_tn(a_data, g, dst, m, k, n));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(self.slot(v, grads), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    add_into(self.slot(*a, grads), g);
                }
                if self.wants(*row) {
                    let n = out.shape()[1];
                    let dst = self.slot(*row, grads).data_mut();
                    for chunk in g.chunks(n) {
                        for (d, &x) in dst.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let dst = self.slot(*a, grads).data_mut();
                    for i in 0..g.len() {
                        dst[i] += g[i] * bv[i];
                    }
                }
                if self.wants(*b) {
                    let dst = self.slot(*b, grads).data_mut();
                    for i in 0..g.len() {
                        dst[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let dst = self.slot(*a, grads).data_mut();
                for (d, &x) in dst.iter_mut().zip(g) {
                    *d += x * c;
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                let dst = self.slot(*a, grads).data_mut();
                for i in 0..g.len() {
                    dst[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Tanh(a) => {
                let y = out.data();
                let dst = self.slot(*a, grads).data_mut();
                for i in 0..g.len() {
                    dst[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let dst = self.slot(*a, grads).data_mut();
                for i in 0..g.len() {
                    dst[i] += g[i] * kernels::gelu_derivative(x[i]);
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let dst = self.slot(*a, grads).data_mut();
                for i in 0..g.len() {
                    dst[i] += g[i] / x[i];
                }
            }
            Op::Softmax(a) => {
                let n = out.shape()[1];
                let y = out.data();
                let dst = self.slot(*a, grads).data_mut();
                for r in 0..y.len() / n {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dst[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Sum(a) => {
                let s = g[0];
                for d in self.slot(*a, grads).data_mut() {
                    *d += s;
                }
            }
            Op::Reshape(a) => add_into(self.slot(*a, grads), g),
            Op::Concat { parts, axis } => {
                let cols = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims2().unwrap();
                    if self.wants(p) {
                        let dst = self.slot(p, grads).data_mut();
                        if *axis == 0 {
                            for (d, &x) in dst.iter_mut().zip(&g[offset * cols..(offset + pr) * cols]) {
                                *d += x;
                            }
                        } else {
                            for r in 0..pr {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                for (d, &x) in dst[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *d += x;
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { input, axis, start } => {
                let in_cols = self.value(*input).shape()[1];
                let (r, c) = out.dims2().unwrap();
                let dst = self.slot(*input, grads).data_mut();
                if *axis == 0 {
                    add_slice(&mut dst[start * in_cols..(start + r) * in_cols], g);
                } else {
                    for row in 0..r {
                        let base = row * in_cols + start;
                        add_slice(&mut dst[base..base + c], &g[row * c..(row + 1) * c]);
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let cols = out.shape()[1];
                let dst = self.slot(*table, grads).data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    let id = id as usize;
                    add_slice(&mut dst[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }
            Op::MaxAxis0 { input, arg } => {
                let cols = out.shape()[1];
                let dst = self.slot(*input, grads).data_mut();
                for (j, &row) in arg.iter().enumerate() {
                    dst[row * cols + j] += g[j];
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = out.shape()[1];
                let gamma = self.value(*gain).data();
                if self.wants(*gain) {
                    let dst = self.slot(*gain, grads).data_mut();
                    for (i, (&gi, &h)) in g.iter().zip(xhat).enumerate() {
                        dst[i % c] += gi * h;
                    }
                }
                if self.wants(*bias) {
                    let dst = self.slot(*bias, grads).data_mut();
                    for (i, &gi) in g.iter().enumerate() {
                        dst[i % c] += gi;
                    }
                }
                if self.wants(*x) {
                    let dst = self.slot(*x, grads).data_mut();
                    let mut dxhat = vec![0.0f32; c];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let base = r * c;
                        let mut mean_d = 0.0f32;
                        let mut mean_dh = 0.0f32;
                        for j in 0..c {
                            dxhat[j] = g[base + j] * gamma[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * xhat[base + j];
                        }
                        mean_d /= c as f32;
                        mean_dh /= c as f32;
                        for j in 0..c {
                            dst[base + j] += is * (dxhat[j] - mean_d - xhat[base + j] * mean_dh);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                key_valid,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, key_valid, probs, g, grads),
            Op::MapSum { input, local_grad } => {
                let s = g[0];
                let dst = self.slot(*input, grads).data_mut();
                for (d, &l) in dst.iter_mut().zip(local_grad) {
                    *d += s * l;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_valid: &[bool],
        probs: &[f32],
        g: &[f32],
        grads: &mut [Option<Tensor>],
    ) {
        let (s, d) = self.value(q).dims2().unwrap();
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0f32; s * d];
        let mut dk = vec![0.0f32; s * d];
        let mut dv = vec![0.0f32; s * d];
        let mut dp = vec![0.0f32; s];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..s {
                let p = &probs[(h * s + i) * s..(h * s + i + 1) * s];
                let gi = &g[i * d + off..i * d + off + dh];
                let mut dot = 0.0f32;
                for j in 0..s {
                    if !key_valid[j] {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + dh];
                    dp[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += dp[j] * p[j];
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (acc, &x) in dvj.iter_mut().zip(gi) {
                        *acc += p[j] * x;
                    }
                }
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..s {
                    if !key_valid[j] {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let dqi = &mut dq[i * d + off..i * d + off + dh];
                    for (acc, &x) in dqi.iter_mut().zip(kj) {
                        *acc += ds * x;
                    }
                    let dkj = &mut dk[j * d + off..j * d + off + dh];
                    for (acc, &x) in dkj.iter_mut().zip(qi) {
                        *acc += ds * x;
                    }
                }
            }
        }
        for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                add_into(self.slot(var, grads), &delta);
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Tensor>]) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }
}

fn add_slice(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_into(dst: &mut Tensor, src: &[f32]) {
    add_slice(dst.data_mut(), src);
}

fn gemm_into(dst: &mut Tensor, f: impl FnOnce(&mut [f32])) {
    f(dst.data_mut());
}
