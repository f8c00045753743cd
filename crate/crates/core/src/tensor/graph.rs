//! Reverse-mode automatic differentiation over a fixed operation catalog.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value plus whatever the backward rule needs. Nodes only reference earlier
//! nodes, so walking the tape from the end visits nodes in reverse
//! topological order.

use std::borrow::Cow;

use rand::Rng as _;

use super::dense::{self, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SelectRow(Var, usize),
    Gather(Var, Vec<usize>),
    Cosine {
        u: Var,
        v: Var,
        nu: f64,
        nv: f64,
    },
    Sum(Var),
    PairwiseBce(Var, Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), true)
    }

    /// Trainable leaf borrowing its value.
    pub fn param_ref(&mut self, value: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), false)
    }

    /// Non-trainable leaf borrowing its value.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).shape2();
        let (k2, n) = self.value(b).shape2();
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let out = dense::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::from_parts(m, n, out),
            Op::MatMul(a, b),
            rg,
            "matmul",
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).shape2();
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(n, m, out),
            Op::Transpose(a),
            rg,
            "transpose",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape2() != tb.shape2() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape2(), tb.shape2()),
            ));
        }
        let (r, c) = ta.shape2();
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(r, c, out), Op::Add(a, b), rg, "add")
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        let b = self.value(bias);
        if b.numel() != c {
            return Err(Error::shape(
                "add_row",
                format!("bias len {} vs cols {c}", b.numel()),
            ));
        }
        let bd = b.data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(
            Tensor::from_parts(r, c, out),
            Op::AddRow(a, bias),
            rg,
            "add_row",
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (r, cols) = self.value(a).shape2();
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(r, cols, out),
            Op::Scale(a, c),
            rg,
            "scale",
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(r, c, out), Op::Relu(a), rg, "relu")
    }

    /// Inverted dropout. In train mode each entry is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`; eval mode is the identity.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64, mode: DropoutMode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!(
                "dropout p must lie in [0,1), got {p}"
            )));
        }
        if mode == DropoutMode::Eval || p == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).shape2();
        let mut g = rng::stream(seed, "dropout", 0);
        let keep = 1.0 / (1.0 - p);
        let mult: Vec<f64> = (0..r * c)
            .map(|_| if g.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(&mult)
            .map(|(x, m)| x * m)
            .collect();
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(r, c, out),
            Op::Dropout(a, mult),
            rg,
            "dropout",
        )
    }

    /// Softmax over the last axis.
    ///
    /// `mask` has either one entry per column, broadcast over rows, or one
    /// entry per element. `false` entries receive weight exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        if let Some(m) = mask {
            if m.len() != c && m.len() != r * c {
                return Err(Error::shape(
                    "softmax",
                    format!("mask len {} for {r}x{c}", m.len()),
                ));
            }
        }
        let valid = |i: usize, j: usize| match mask {
            None => true,
            Some(m) if m.len() == c => m[j],
            Some(m) => m[i * c + j],
        };
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = (0..c)
                .filter(|&j| valid(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateMask { row: i });
            }
            let mut total = 0.0;
            for j in 0..c {
                if valid(i, j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= total;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(r, c, out), Op::Softmax(a), rg, "softmax")
    }

    /// Per-row layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let (r, c) = self.value(x).shape2();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma/beta must have {c} entries"),
            ));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::from_parts(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    /// Concatenates along the last axis. All parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let rows = self.value(first).shape2().0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).shape2();
            if r != rows {
                return Err(Error::shape("concat", format!("row count {r} vs {rows}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_parts(rows, total, out),
            Op::Concat(parts.to_vec()),
            rg,
            "concat",
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {c}", start + len),
            ));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(r, len, out),
            Op::SliceCols(a, start),
            rg,
            "slice_cols",
        )
    }

    /// Stacks parts vertically. All parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let cols = self.value(first).shape2().1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).shape2();
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column count {c} vs {cols}"),
                ));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_parts(rows, cols, out),
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        if len == 0 || start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("[{start}, {}) of {r}", start + len),
            ));
        }
        let out = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(len, c, out),
            Op::SliceRows(a, start),
            rg,
            "slice_rows",
        )
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (r, c) = self.value(a).shape2();
        if row >= r {
            return Err(Error::shape("select_row", format!("row {row} of {r}")));
        }
        let out = self.value(a).row_slice(row).to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(1, c, out),
            Op::SelectRow(a, row),
            rg,
            "select_row",
        )
    }

    /// Gathers rows of `table` by index.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).shape2();
        if ids.is_empty() {
            return Err(Error::shape("embedding_lookup", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("id {bad} outside table of {r}"),
            ));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::from_parts(ids.len(), c, out),
            Op::Gather(table, ids.to_vec()),
            rg,
            "embedding_lookup",
        )
    }

    /// `⟨u,v⟩ / (‖u‖‖v‖)` as a scalar node.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.value(u).data(), self.value(v).data());
        if a.len() != b.len() {
            return Err(Error::shape(
                "cosine",
                format!("{} vs {}", a.len(), b.len()),
            ));
        }
        let (nu, nv) = (dense::norm(a), dense::norm(b));
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::Degenerate(
                "cosine similarity with a zero-norm vector".into(),
            ));
        }
        let s = dense::dot(a, b) / (nu * nv);
        let rg = self.rg(u) || self.rg(v);
        self.push(Tensor::scalar(s), Op::Cosine { u, v, nu, nv }, rg, "cosine")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    /// `-ln softmax([s_pos, s_neg])[0]`, evaluated as a stable softplus.
    pub fn pairwise_bce(&mut self, s_pos: Var, s_neg: Var) -> Result<Var> {
        if self.value(s_pos).numel() != 1 || self.value(s_neg).numel() != 1 {
            return Err(Error::shape("pairwise_bce", "scores must be scalars"));
        }
        let z = self.value(s_neg).item() - self.value(s_pos).item();
        let loss = softplus(z);
        let rg = self.rg(s_pos) || self.rg(s_neg);
        self.push(
            Tensor::scalar(loss),
            Op::PairwiseBce(s_pos, s_neg),
            rg,
            "pairwise_bce",
        )
    }

    /// Reverse pass from a scalar `loss`. Every trainable leaf receives a
    /// gradient, zero when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                let (r, c) = node.value.shape2();
                match (g, &node.op, node.requires_grad) {
                    (Some(g), _, _) => Some(Tensor::from_parts(r, c, g)),
                    (None, Op::Leaf, true) => Some(Tensor::zeros(&[r, c])),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(var) {
            return;
        }
        let slot = &mut grads[var.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        f(buf);
    }

    fn propagate(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).shape2();
                let (_, n) = self.value(*b).shape2();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| {
                    let da = dense::matmul_nt(dy, bd, m, n, k);
                    add_into(g, &da);
                });
                self.accumulate(grads, *b, |g| dense::matmul_tn_acc(ad, dy, m, k, n, g));
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).shape2();
                self.accumulate(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += dy[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| add_into(g, dy));
                self.accumulate(grads, *b, |g| add_into(g, dy));
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, |g| add_into(g, dy));
                let c = self.value(*bias).numel();
                self.accumulate(grads, *bias, |g| {
                    for row in dy.chunks(c) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |g| {
                    for (gi, d) in g.iter_mut().zip(dy) {
                        *gi += c * d;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for ((gi, d), xi) in g.iter_mut().zip(dy).zip(x) {
                        if *xi > 0.0 {
                            *gi += d;
                        }
                    }
                });
            }
            Op::Dropout(a, mult) => {
                self.accumulate(grads, *a, |g| {
                    for ((gi, d), m) in g.iter_mut().zip(dy).zip(mult) {
                        *gi += d * m;
                    }
                });
            }
            Op::Softmax(a) => {
                let (_, c) = node.value.shape2();
                self.accumulate(grads, *a, |g| {
                    for ((grow, yrow), drow) in g.chunks_mut(c).zip(y.chunks(c)).zip(dy.chunks(c)) {
                        let inner = dense::dot(yrow, drow);
                        for j in 0..c {
                            grow[j] += yrow[j] * (drow[j] - inner);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = node.value.shape2();
                let gd = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += dy[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |g| {
                    for row in dy.chunks(c) {
                        add_into(g, row);
                    }
                });
                self.accumulate(grads, *x, |g| {
                    let n = c as f64;
                    for i in 0..r {
                        let dxhat: Vec<f64> = (0..c).map(|j| dy[i * c + j] * gd[j]).collect();
                        let h = &xhat[i * c..(i + 1) * c];
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dense::dot(&dxhat, h);
                        for j in 0..c {
                            g[i * c + j] += inv_std[i] / n * (n * dxhat[j] - s1 - h[j] * s2);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let (rows, total) = node.value.shape2();
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = self.value(p).shape2();
                    self.accumulate(grads, p, |g| {
                        for i in 0..rows {
                            add_into(
                                &mut g[i * c..(i + 1) * c],
                                &dy[i * total + offset..i * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape2();
                let len = node.value.shape2().1;
                self.accumulate(grads, *a, |g| {
                    for i in 0..r {
                        add_into(
                            &mut g[i * c + start..i * c + start + len],
                            &dy[i * len..(i + 1) * len],
                        );
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, |g| add_into(g, &dy[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let (_, c) = self.value(*a).shape2();
                self.accumulate(grads, *a, |g| {
                    add_into(&mut g[start * c..start * c + dy.len()], dy)
                });
            }
            Op::SelectRow(a, row) => {
                let (_, c) = self.value(*a).shape2();
                self.accumulate(grads, *a, |g| add_into(&mut g[row * c..(row + 1) * c], dy));
            }
            Op::Gather(table, ids) => {
                let (_, c) = self.value(*table).shape2();
                self.accumulate(grads, *table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * c..(id + 1) * c], &dy[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Cosine { u, v, nu, nv } => {
                let s = y[0];
                let d = dy[0];
                let (ud, vd) = (self.value(*u).data(), self.value(*v).data());
                let denom = nu * nv;
                self.accumulate(grads, *u, |g| {
                    for ((gi, ui), vi) in g.iter_mut().zip(ud).zip(vd) {
                        *gi += d * (vi / denom - s * ui / (nu * nu));
                    }
                });
                self.accumulate(grads, *v, |g| {
                    for ((gi, ui), vi) in g.iter_mut().zip(ud).zip(vd) {
                        *gi += d * (ui / denom - s * vi / (nv * nv));
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |g| {
                    for gi in g.iter_mut() {
                        *gi += dy[0];
                    }
                });
            }
            Op::PairwiseBce(pos, neg) => {
                let z = self.value(*neg).item() - self.value(*pos).item();
                // d/dz softplus(z) = sigmoid(z) = 1 - p
                let q = sigmoid(z);
                self.accumulate(grads, *pos, |g| g[0] -= dy[0] * q);
                self.accumulate(grads, *neg, |g| g[0] += dy[0] * q);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
