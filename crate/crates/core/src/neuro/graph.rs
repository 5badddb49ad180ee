//! Tape of matrix operations with reverse-mode differentiation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::neuro::{ParamId, ParameterSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One attention query: output row `row` of the caller's layout attends to
/// key/value rows `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub row: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Gather { table: Var, ids: Vec<usize> },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Attention { q: Var, k: Var, v: Var, spans: Vec<(usize, usize)>, weights: Vec<f64>, scale: f64 },
    LogSoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they are evaluated so gradients can be computed by
/// walking the tape backwards.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// The single value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.val(v).values()[0]
    }

    /// A constant; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        let (r, c) = t.matrix_dims().expect("graph inputs must have rank <= 2");
        let t = Tensor::matrix(r, c, t.into_values());
        self.push(t, Op::Input, false)
    }

    pub fn column(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(Tensor::matrix(n, 1, values), Op::Input, false)
    }

    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        let t = params.value(id);
        let (r, c) = t.matrix_dims().expect("parameters are validated on insertion");
        let t = Tensor::matrix(r, c, t.values().to_vec());
        self.push(t, Op::Param(id), true)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let values = self.val(a).values().iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, values), op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!((r, c), self.dims(b), "elementwise operands must have equal shapes");
        let values =
            self.val(a).values().iter().zip(self.val(b).values()).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(r, c, values), op, ng)
    }

    /// Rows of `table` picked by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (vocab, dim) = self.dims(table);
        let src = self.val(table).values();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            assert!(id < vocab, "embedding id {id} out of range {vocab}");
            out.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let ng = self.ng(table);
        self.push(Tensor::matrix(ids.len(), dim, out), Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        matmul_into(self.val(a).values(), self.val(b).values(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), ng)
    }

    /// `a + bias` with a `1 x n` bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.dims(bias), (1, n), "bias must be 1 x cols");
        let b = self.val(bias).values();
        let mut out = self.val(a).values().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(Tensor::matrix(m, n, out), Op::AddBias(a, bias), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, i.e. `-ln(sigmoid(-x))`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        assert!(parts.iter().all(|&p| self.dims(p).0 == rows), "concat row counts differ");
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.val(p).values()[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let (m, n) = self.dims(a);
        let src = self.val(a).values();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert!(r < m, "row {r} out of range {m}");
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(rows.len(), n, out), Op::SelectRows(a, rows.to_vec()), ng)
    }

    /// Scaled dot-product attention. Query row `m` attends to key/value rows
    /// `spans[m].start..spans[m].end` (`spans[m].row` is ignored here).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spans: &[Span]) -> Var {
        let (mq, d) = self.dims(q);
        let (nk, dk) = self.dims(k);
        let (nv, dv) = self.dims(v);
        assert_eq!(mq, spans.len(), "one span per query row");
        assert_eq!(d, dk, "query/key widths differ");
        assert_eq!(nk, nv, "key/value row counts differ");
        let scale = 1.0 / math::sqrt(d as f64);
        let (qv, kv, vv) = (self.val(q).values(), self.val(k).values(), self.val(v).values());
        let mut out = vec![0.0; mq * dv];
        let mut weights = Vec::new();
        let mut scores = Vec::new();
        for (m, s) in spans.iter().enumerate() {
            assert!(s.start < s.end && s.end <= nk, "attention span out of range");
            let qm = &qv[m * d..(m + 1) * d];
            scores.clear();
            for j in s.start..s.end {
                scores.push(scale * dot(qm, &kv[j * d..(j + 1) * d]));
            }
            let w = math::softmax(&scores);
            let om = &mut out[m * dv..(m + 1) * dv];
            for (wj, j) in w.iter().zip(s.start..s.end) {
                axpy(*wj, &vv[j * dv..(j + 1) * dv], om);
            }
            weights.extend_from_slice(&w);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let spans = spans.iter().map(|s| (s.start, s.end)).collect();
        self.push(Tensor::matrix(mq, dv, out), Op::Attention { q, k, v, spans, weights, scale }, ng)
    }

    /// Attention weights of an attention node, one vector per query row.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Vec<f64>>> {
        match &self.nodes[v.0].op {
            Op::Attention { spans, weights, .. } => {
                let mut out = Vec::with_capacity(spans.len());
                let mut off = 0;
                for &(s, e) in spans {
                    out.push(weights[off..off + e - s].to_vec());
                    off += e - s;
                }
                Some(out)
            }
            _ => None,
        }
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.val(a).values().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|&x| math::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, n, out), Op::LogSoftmaxRows(a), ng)
    }

    /// Column `cols[r]` of each row `r`, as an `m x 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(m, cols.len(), "one column index per row");
        let src = self.val(a).values();
        let out = cols.iter().enumerate().map(|(r, &c)| {
            assert!(c < n, "column {c} out of range {n}");
            src[r * n + c]
        });
        let out = out.collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, 1, out), Op::Pick(a, cols.to_vec()), ng)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = self.val(a).values().chunks(n).map(|r| r.iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::matrix(m, 1, out), Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).values().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::matrix(1, 1, vec![s]), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let vals = self.val(a).values();
        let s = vals.iter().sum::<f64>() / vals.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::matrix(1, 1, vec![s]), Op::Mean(a), ng)
    }

    /// Writes `d loss / d param` into the gradient slots of `params`
    /// (previous gradients are cleared).
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::ShapeMismatch { expected: vec![1, 1], got: vec![
                self.dims(loss).0,
                self.dims(loss).1,
            ] });
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        params.zero_grads();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, params);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut ParameterSet,
    ) {
        let y = node.value.values();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => params.accumulate_grad(*id, g),
            Op::Gather { table, ids } => {
                let (_, dim) = self.dims(*table);
                self.acc(grads, *table, |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &g[r * dim..(r + 1) * dim], &mut d[id * dim..(id + 1) * dim]);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.val(*a).values(), self.val(*b).values());
                self.acc(grads, *a, |da| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            da[i * k + kk] += dot(gi, &bv[kk * n..(kk + 1) * n]);
                        }
                    }
                });
                self.acc(grads, *b, |db| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            axpy(av[i * k + kk], gi, &mut db[kk * n..(kk + 1) * n]);
                        }
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let n = self.dims(*a).1;
                self.acc(grads, *a, |d| axpy(1.0, g, d));
                self.acc(grads, *bias, |d| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, d);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, g, d));
                self.acc(grads, *b, |d| axpy(1.0, g, d));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, g, d));
                self.acc(grads, *b, |d| axpy(-1.0, g, d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).values(), self.val(*b).values());
                self.acc(grads, *a, |d| zip3(d, g, bv, |gi, bi| gi * bi));
                self.acc(grads, *b, |d| zip3(d, g, av, |gi, ai| gi * ai));
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.val(*a).values(), self.val(*b).values());
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        if av[i] <= bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        if av[i] > bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |d| axpy(*c, g, d)),
            Op::AddScalar(a) => self.acc(grads, *a, |d| axpy(1.0, g, d)),
            Op::Tanh(a) => self.acc(grads, *a, |d| zip3(d, g, y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Sigmoid(a) => self.acc(grads, *a, |d| zip3(d, g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Softplus(a) => {
                let x = self.val(*a).values();
                self.acc(grads, *a, |d| zip3(d, g, x, |gi, xi| gi * math::sigmoid(xi)));
            }
            Op::Exp(a) => self.acc(grads, *a, |d| zip3(d, g, y, |gi, yi| gi * yi)),
            Op::Clamp(a, lo, hi) => {
                let x = self.val(*a).values();
                self.acc(grads, *a, |d| {
                    zip3(d, g, x, |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 })
                });
            }
            Op::ConcatCols(parts) => {
                let rows = self.dims(parts[0]).0;
                let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    self.acc(grads, p, |d| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            axpy(1.0, src, &mut d[r * w..(r + 1) * w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SelectRows(a, rows) => {
                let n = self.dims(*a).1;
                self.acc(grads, *a, |d| {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(1.0, &g[i * n..(i + 1) * n], &mut d[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::Attention { q, k, v, spans, weights, scale } => {
                self.attention_backward(*q, *k, *v, spans, weights, *scale, g, grads);
            }
            Op::LogSoftmaxRows(a) => {
                let n = self.dims(*a).1;
                self.acc(grads, *a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let gs: f64 = gr.iter().sum();
                        for j in 0..n {
                            dr[j] += gr[j] - math::exp(yr[j]) * gs;
                        }
                    }
                });
            }
            Op::Pick(a, cols) => {
                let n = self.dims(*a).1;
                self.acc(grads, *a, |d| {
                    for (r, &c) in cols.iter().enumerate() {
                        d[r * n + c] += g[r];
                    }
                });
            }
            Op::SumRows(a) => {
                let n = self.dims(*a).1;
                self.acc(grads, *a, |d| {
                    for (row, gr) in d.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x += gr);
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.val(*a).len() as f64;
                self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spans: &[(usize, usize)],
        weights: &[f64],
        scale: f64,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let d = self.dims(q).1;
        let dv = self.dims(v).1;
        let (qv, kv, vv) = (self.val(q).values(), self.val(k).values(), self.val(v).values());
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dvv = vec![0.0; vv.len()];
        let mut off = 0;
        let mut ds = Vec::new();
        for (m, &(s, e)) in spans.iter().enumerate() {
            let w = &weights[off..off + e - s];
            off += e - s;
            let gm = &g[m * dv..(m + 1) * dv];
            ds.clear();
            for (wj, j) in w.iter().zip(s..e) {
                axpy(*wj, gm, &mut dvv[j * dv..(j + 1) * dv]);
                ds.push(dot(gm, &vv[j * dv..(j + 1) * dv]));
            }
            let mean: f64 = w.iter().zip(&ds).map(|(a, b)| a * b).sum();
            let qm = &qv[m * d..(m + 1) * d];
            for (idx, j) in (s..e).enumerate() {
                let dsj = scale * w[idx] * (ds[idx] - mean);
                axpy(dsj, &kv[j * d..(j + 1) * d], &mut dq[m * d..(m + 1) * d]);
                axpy(dsj, qm, &mut dk[j * d..(j + 1) * d]);
            }
        }
        self.acc(grads, q, |t| axpy(1.0, &dq, t));
        self.acc(grads, k, |t| axpy(1.0, &dk, t));
        self.acc(grads, v, |t| axpy(1.0, &dvv, t));
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.val(v).len()]);
        f(slot);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn zip3(d: &mut [f64], g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((di, gi), xi) in d.iter_mut().zip(g).zip(x) {
        *di += f(*gi, *xi);
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let oi = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                axpy(aik, &b[kk * n..(kk + 1) * n], oi);
            }
        }
    }
}
