//! Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every op in creation order, so node indices already
//! form a topological order and the backward sweep is a single reverse scan.
//! Parameters are borrowed from a [`ParamStore`] rather than copied.
//!
//! Binary elementwise ops broadcast their second operand: it may have the
//! same shape as the first, be a `1 x n` row, an `m x 1` column, or a `1 x 1`
//! scalar.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>, Axis),
    Slice {
        src: Var,
        axis: Axis,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
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

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// A differentiable input whose gradient can be read back with [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bc = Broadcast::new(name, ta, tb)?;
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, tb.data()[bc.index(k / cols, k % cols)]))
            .collect();
        Tensor::new(ta.dims().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("div", a, b, |x, y| x / y)?;
        Ok(self.push_op(out, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push_op(out, Op::Offset(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push_op(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_op(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push_op(out, Op::Log(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push_op(out, Op::Sqrt(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push_op(out, Op::Softplus(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        self.push_op(out, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = row_log_softmax(self.value(a));
        self.push_op(out, Op::LogSoftmax(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = (self.value(first).rows(), self.value(first).cols());
        let mut data = Vec::new();
        let dims = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != r0 {
                        return Err(Error::shape("concat", self.value(first).dims(), t.dims()));
                    }
                    cols += t.cols();
                }
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                vec![r0, cols]
            }
            Axis::Rows => {
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != c0 {
                        return Err(Error::shape("concat", self.value(first).dims(), t.dims()));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                vec![rows, c0]
            }
        };
        let out = Tensor::new(dims, data)?;
        Ok(self.push_op(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, src: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        let out = match axis {
            Axis::Cols => {
                if start + len > c {
                    return Err(Error::shape("slice", t.dims(), &[r, start + len]));
                }
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&t.row_slice(i)[start..start + len]);
                }
                Tensor::new(vec![r, len], data)?
            }
            Axis::Rows => {
                if start + len > r {
                    return Err(Error::shape("slice", t.dims(), &[start + len, c]));
                }
                Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?
            }
        };
        Ok(self.push_op(out, Op::Slice { src, axis, start }, &[src]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push_op(out, Op::Mean(a), &[a])
    }

    /// Sums over rows, producing a `1 x cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ones = self.constant(Tensor::full(1, self.value(a).rows(), 1.0));
        self.matmul(ones, a)
    }

    /// Selects rows of `src` (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::Contract(format!(
                    "row index {r} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let out = Tensor::new(vec![rows.len(), t.cols()], data)?;
        Ok(self.push_op(out, Op::GatherRows(src, rows.to_vec()), &[src]))
    }

    /// Picks `src[r, cols[r]]` for every row, producing an `m x 1` column.
    pub fn pick(&mut self, src: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(src);
        if cols.len() != t.rows() {
            return Err(Error::shape("pick", t.dims(), &[cols.len(), 1]));
        }
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= t.cols() {
                return Err(Error::Contract(format!(
                    "column index {c} out of range for {} columns",
                    t.cols()
                )));
            }
            data.push(t.get(r, c));
        }
        let out = Tensor::new(vec![cols.len(), 1], data)?;
        Ok(self.push_op(out, Op::Pick(src, cols.to_vec()), &[src]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                lv.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.dims().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.iter().map(|(&id, &v)| (id, v)).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(a) {
                    let mut ga = Tensor::zeros(m, k);
                    matmul_bt_acc(g.data(), tb.data(), ga.data_mut(), m, n, k);
                    accumulate(grads, a, ga);
                }
                if self.needs(b) {
                    let mut gb = Tensor::zeros(k, n);
                    matmul_at_acc(ta.data(), g.data(), gb.data_mut(), m, k, n);
                    accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, |gv, _| gv);
                    accumulate(grads, b, gb);
                }
            }
            &Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, |gv, _| -gv);
                    accumulate(grads, b, gb);
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let bc = Broadcast::new("mul", ta, tb).expect("validated in forward");
                let cols = ta.cols();
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv * tb.data()[bc.index(k / cols, k % cols)])
                        .collect();
                    accumulate(grads, a, Tensor::new(ta.dims().to_vec(), data).unwrap());
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, |gv, k| gv * ta.data()[k]);
                    accumulate(grads, b, gb);
                }
            }
            &Op::Div(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let bc = Broadcast::new("div", ta, tb).expect("validated in forward");
                let cols = ta.cols();
                if self.needs(a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv / tb.data()[bc.index(k / cols, k % cols)])
                        .collect();
                    accumulate(grads, a, Tensor::new(ta.dims().to_vec(), data).unwrap());
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, |gv, k| {
                        let bv = tb.data()[bc.index(k / cols, k % cols)];
                        -gv * ta.data()[k] / (bv * bv)
                    });
                    accumulate(grads, b, gb);
                }
            }
            &Op::Scale(a, c) => accumulate(grads, a, g.map(|v| v * c)),
            &Op::Offset(a) => accumulate(grads, a, g.clone()),
            &Op::Tanh(a) => accumulate(grads, a, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv))),
            &Op::Sigmoid(a) => {
                accumulate(grads, a, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)))
            }
            &Op::Exp(a) => accumulate(grads, a, zip_map(g, y, |gv, yv| gv * yv)),
            &Op::Log(a) => accumulate(grads, a, zip_map(g, self.value(a), |gv, xv| gv / xv)),
            &Op::Sqrt(a) => accumulate(grads, a, zip_map(g, y, |gv, yv| 0.5 * gv / yv)),
            &Op::Softplus(a) => accumulate(
                grads,
                a,
                zip_map(g, self.value(a), |gv, xv| gv * sigmoid(xv)),
            ),
            &Op::Softmax(a) => {
                let cols = y.cols();
                let mut out = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        out.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                accumulate(grads, a, out);
            }
            &Op::LogSoftmax(a) => {
                let cols = y.cols();
                let mut out = Tensor::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let total: f64 = gr.iter().sum();
                    for c in 0..cols {
                        out.set(r, c, gr[c] - yr[c].exp() * total);
                    }
                }
                accumulate(grads, a, out);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let (pr, pc) = (tp.rows(), tp.cols());
                    if self.needs(p) {
                        let mut gp = Tensor::zeros(pr, pc);
                        match axis {
                            Axis::Cols => {
                                for r in 0..pr {
                                    gp.data_mut()[r * pc..(r + 1) * pc]
                                        .copy_from_slice(&g.row_slice(r)[offset..offset + pc]);
                                }
                            }
                            Axis::Rows => gp
                                .data_mut()
                                .copy_from_slice(&g.data()[offset * pc..(offset + pr) * pc]),
                        }
                        let gp = Tensor::new(tp.dims().to_vec(), gp.into_data()).unwrap();
                        accumulate(grads, p, gp);
                    }
                    offset += if *axis == Axis::Cols { pc } else { pr };
                }
            }
            &Op::Slice { src, axis, start } => {
                let ts = self.value(src);
                let (sr, sc) = (ts.rows(), ts.cols());
                let mut gs = Tensor::zeros(sr, sc);
                match axis {
                    Axis::Cols => {
                        let len = g.cols();
                        for r in 0..sr {
                            gs.data_mut()[r * sc + start..r * sc + start + len]
                                .copy_from_slice(g.row_slice(r));
                        }
                    }
                    Axis::Rows => gs.data_mut()[start * sc..start * sc + g.numel()]
                        .copy_from_slice(g.data()),
                }
                let gs = Tensor::new(ts.dims().to_vec(), gs.into_data()).unwrap();
                accumulate(grads, src, gs);
            }
            &Op::Sum(a) => {
                let ta = self.value(a);
                let gs = Tensor::new(ta.dims().to_vec(), vec![g.data()[0]; ta.numel()]).unwrap();
                accumulate(grads, a, gs);
            }
            &Op::Mean(a) => {
                let ta = self.value(a);
                let v = g.data()[0] / ta.numel() as f64;
                accumulate(grads, a, Tensor::new(ta.dims().to_vec(), vec![v; ta.numel()]).unwrap());
            }
            Op::GatherRows(src, rows) => {
                let ts = self.value(*src);
                let cols = ts.cols();
                let mut gs = Tensor::new(ts.dims().to_vec(), vec![0.0; ts.numel()]).unwrap();
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut gs.data_mut()[r * cols..(r + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d += s;
                    }
                }
                accumulate(grads, *src, gs);
            }
            Op::Pick(src, picks) => {
                let ts = self.value(*src);
                let mut gs = Tensor::new(ts.dims().to_vec(), vec![0.0; ts.numel()]).unwrap();
                for (r, &c) in picks.iter().enumerate() {
                    let cur = gs.get(r, c);
                    gs.set(r, c, cur + g.data()[r]);
                }
                accumulate(grads, *src, gs);
            }
        }
    }

    /// Sums an output-shaped gradient down to the (possibly broadcast) shape of `b`.
    fn reduce_to(&self, b: Var, g: &Tensor, f: impl Fn(f64, usize) -> f64) -> Tensor {
        let tb = self.value(b);
        let bc = Broadcast {
            row_step: tb.rows() != 1,
            col_step: tb.cols() != 1,
            cols: tb.cols(),
        };
        let gcols = g.cols();
        let mut out = Tensor::new(tb.dims().to_vec(), vec![0.0; tb.numel()]).unwrap();
        for (k, &gv) in g.data().iter().enumerate() {
            out.data_mut()[bc.index(k / gcols, k % gcols)] += f(gv, k);
        }
        out
    }
}

struct Broadcast {
    row_step: bool,
    col_step: bool,
    cols: usize,
}

impl Broadcast {
    fn new(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Self> {
        let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
        let ok = (br == ar || br == 1) && (bc == ac || bc == 1);
        if !ok {
            return Err(Error::shape(op, a.dims(), b.dims()));
        }
        Ok(Self {
            row_step: br != 1,
            col_step: bc != 1,
            cols: bc,
        })
    }

    fn index(&self, r: usize, c: usize) -> usize {
        let r = if self.row_step { r } else { 0 };
        let c = if self.col_step { c } else { 0 };
        r * self.cols + c
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn row_softmax(t: &Tensor) -> Tensor {
    let mut out = row_log_softmax(t);
    out.data_mut().iter_mut().for_each(|v| *v = v.exp());
    out
}

pub fn row_log_softmax(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Gradients from one backward sweep.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn into_param_grads(mut self, store: &ParamStore) -> ParamGrads {
        let mut out = vec![None; store.len()];
        for (id, v) in self.params {
            out[id.index()] = self.by_node.get_mut(v.0).and_then(Option::take);
        }
        ParamGrads::from_vec(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row(v.to_vec())
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 4));
        let s = g.softmax(x);
        assert!(g.value(s).data().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn sum_gives_ones_gradient() {
        let mut g = Graph::new();
        let x = g.input(row(&[1.0, -2.0, 3.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn self_dot_gives_twice_input() {
        let mut g = Graph::new();
        let x = g.input(row(&[1.5, -2.0, 0.25]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 5));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 5]"), "{err}");
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 5]"), "{err}");
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(3, 2));
        let b = g.input(row(&[1.0, 2.0]));
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(b).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(grads.wrt(b).unwrap().dims(), &[1, 2]);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut g = Graph::new();
        let a = g.input(row(&[1.0, 2.0]));
        let b = g.input(row(&[3.0]));
        let c = g.concat(&[a, b], Axis::Cols).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let s = g.slice(c, Axis::Cols, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 3.0]);
        let t = g.sum(s);
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let mut g = Graph::new();
        let c = g.constant(row(&[1.0, 2.0]));
        let x = g.input(row(&[0.5, 0.5]));
        let p = g.mul(c, x).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 2.0]);
    }
}
