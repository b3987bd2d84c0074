//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so a reverse sweep over the tape is a valid
//! topological order for back-propagation.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    /// Gradients w.r.t. each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    Softmax(Var),
    MeanRows(Var),
    Sum(Var),
    Dot(Var, Var),
    MaskMul(Var, Vec<f64>),
    CrossEntropy(Var, usize),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn shape_err<T>(what: &str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives a gradient but is not tied to a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).tensor.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    fn binary_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(what, ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect()).unwrap();
        self.push(t, Op::Scale(a, c))
    }

    /// Sum of same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Shape("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `[m, n] · [n] -> [m]`
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        let (m, n) = match (tw.dims2(), tx.shape()) {
            (Some((m, n)), [k]) if *k == n => (m, n),
            _ => return shape_err("matvec", tw.shape(), tx.shape()),
        };
        let (wd, xd) = (tw.data(), tx.data());
        let out = (0..m)
            .map(|r| {
                let row = &wd[r * n..(r + 1) * n];
                row.iter().zip(xd).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    /// `[m, k] · [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.dims2(), tb.dims2()) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => return shape_err("matmul", ta.shape(), tb.shape()),
        };
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let a_ip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a_ip * b;
                }
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta
            .dims2()
            .ok_or_else(|| Error::Shape(format!("transpose of {:?}", ta.shape())))?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, out)?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect()).unwrap()
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    /// Concatenates rank-1 nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::Shape(format!("concat of {:?}", t.shape())));
            }
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec())))
    }

    /// `a[start..start + len]` of a rank-1 node.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || start + len > ta.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {:?}",
                start + len,
                ta.shape()
            )));
        }
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice(a, start)))
    }

    /// Stacks `n` rank-1 nodes of length `k` into an `[n, k]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let k = match rows.first() {
            Some(&r) => self.value(r).len(),
            None => return Err(Error::Shape("stack of nothing".into())),
        };
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [k] {
                return shape_err("stack", t.shape(), &[k]);
            }
            out.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows.len(), k, out)?;
        Ok(self.push(t, Op::Stack(rows.to_vec())))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let ta = self.value(a);
        match ta.dims2() {
            Some((rows, _)) if r < rows => {}
            _ => return Err(Error::Shape(format!("row {r} of {:?}", ta.shape()))),
        }
        let t = Tensor::vector(ta.row(r).to_vec());
        Ok(self.push(t, Op::Row(a, r)))
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let width = *t.shape().last().unwrap_or(&1);
        for row in t.data_mut().chunks_mut(width.max(1)) {
            softmax_in_place(row);
        }
        self.push(t, Op::Softmax(a))
    }

    /// `[n, k] -> [k]` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (n, k) = ta
            .dims2()
            .ok_or_else(|| Error::Shape(format!("mean_rows of {:?}", ta.shape())))?;
        let mut out = vec![0.0; k];
        for r in 0..n {
            for (o, x) in out.iter_mut().zip(ta.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err("dot", ta.shape(), tb.shape());
        }
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Elementwise product with a constant mask (used by dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != mask.len() {
            return shape_err("mask_mul", ta.shape(), &[mask.len()]);
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MaskMul(a, mask)))
    }

    /// `-log softmax(logits)[target]` for a rank-1 logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 || target >= t.len() {
            return Err(Error::Shape(format!(
                "cross_entropy target {target} for logits {:?}",
                t.shape()
            )));
        }
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target)))
    }

    /// Records an externally computed node with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                Op::Sub(a, b) => {
                    let n = g.len();
                    acc(&mut grads, *a, n).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    acc(&mut grads, *b, n).iter_mut().zip(&g).for_each(|(d, x)| *d -= x);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let n = g.len();
                    let da = acc(&mut grads, *a, n);
                    for i in 0..n {
                        da[i] += g[i] * vb[i];
                    }
                    let db = acc(&mut grads, *b, n);
                    for i in 0..n {
                        db[i] += g[i] * va[i];
                    }
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(d, x)| *d += c * x);
                }
                Op::MatVec(w, x) => {
                    let tw = self.value(*w);
                    let tx = self.value(*x);
                    let (m, n) = tw.dims2().unwrap();
                    let (wd, xd) = (tw.data(), tx.data());
                    let dw = acc(&mut grads, *w, m * n);
                    for r in 0..m {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (d, xv) in dw[r * n..(r + 1) * n].iter_mut().zip(xd) {
                                *d += gr * xv;
                            }
                        }
                    }
                    let dx = acc(&mut grads, *x, n);
                    for r in 0..m {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (d, wv) in dx.iter_mut().zip(&wd[r * n..(r + 1) * n]) {
                                *d += gr * wv;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2().unwrap();
                    let (_, n) = tb.dims2().unwrap();
                    let (ad, bd) = (ta.data(), tb.data());
                    // dA = G · Bᵀ
                    let da = acc(&mut grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                    // dB = Aᵀ · G
                    let db = acc(&mut grads, *b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = ad[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2().unwrap();
                    let da = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        acc(&mut grads, *p, len)
                            .iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(d, x)| *d += x);
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, len)[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, x)| *d += x);
                }
                Op::Stack(rows) => {
                    let k = out.shape()[1];
                    for (r, v) in rows.iter().enumerate() {
                        acc(&mut grads, *v, k)
                            .iter_mut()
                            .zip(&g[r * k..(r + 1) * k])
                            .for_each(|(d, x)| *d += x);
                    }
                }
                Op::Row(a, r) => {
                    let ta = self.value(*a);
                    let k = ta.shape()[1];
                    acc(&mut grads, *a, ta.len())[r * k..(r + 1) * k]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, x)| *d += x);
                }
                Op::Softmax(a) => {
                    let width = (*out.shape().last().unwrap_or(&1)).max(1);
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for start in (0..g.len()).step_by(width) {
                        let yr = &y[start..start + width];
                        let gr = &g[start..start + width];
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..width {
                            da[start + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let (n, k) = ta.dims2().unwrap();
                    let da = acc(&mut grads, *a, n * k);
                    for r in 0..n {
                        for j in 0..k {
                            da[r * k + j] += g[j] / n as f64;
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, len).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let n = va.len();
                    let da = acc(&mut grads, *a, n);
                    for i in 0..n {
                        da[i] += g[0] * vb[i];
                    }
                    let db = acc(&mut grads, *b, n);
                    for i in 0..n {
                        db[i] += g[0] * va[i];
                    }
                }
                Op::MaskMul(a, mask) => {
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * mask[i];
                    }
                }
                Op::CrossEntropy(logits, target) => {
                    let mut p = self.value(*logits).data().to_vec();
                    softmax_in_place(&mut p);
                    p[*target] -= 1.0;
                    acc(&mut grads, *logits, p.len())
                        .iter_mut()
                        .zip(&p)
                        .for_each(|(d, x)| *d += g[0] * x);
                }
                Op::Custom(inputs, op) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gt = Tensor::new(out.shape().to_vec(), g.clone())?;
                    let local = op.backward(&ins, out, &gt);
                    for (v, lg) in inputs.iter().zip(local) {
                        let len = self.value(*v).len();
                        acc(&mut grads, *v, len)
                            .iter_mut()
                            .zip(lg.data())
                            .for_each(|(d, x)| *d += x);
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients { grads })
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every parameter leaf into the store's buffers.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for (&id, &var) in &graph.param_vars {
            if let Some(g) = self.wrt(var) {
                let p = store.get_mut(id);
                p.grad.data_mut().iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
        }
        debug_assert!(graph.nodes.iter().filter(|n| n.param.is_some()).count() == graph.param_vars.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecvar(g: &mut Graph, v: &[f64]) -> Var {
        g.input(Tensor::vector(v.to_vec()))
    }

    /// Central differences on the value of `f` w.r.t. each input vector.
    fn check(inputs: &[Vec<f64>], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|v| vecvar(&mut g, v)).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        let eval = |inputs: &[Vec<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|v| vecvar(&mut g, v)).collect();
            let out = f(&mut g, &vars);
            g.value(out).item()
        };
        let h = 1e-6;
        for (k, v) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]).map(|s| s.to_vec()).unwrap_or(vec![0.0; v.len()]);
            for i in 0..v.len() {
                let mut plus = inputs.to_vec();
                plus[k][i] += h;
                let mut minus = inputs.to_vec();
                minus[k][i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1.0);
                assert!(err < 1e-6, "input {k}[{i}]: analytic {} numeric {numeric}", analytic[i]);
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let p = vecvar(&mut g, &[1.0, -2.0, 3.0]);
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(p).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_gradient_is_twice_input() {
        let mut g = Graph::new();
        let p = vecvar(&mut g, &[1.0, -2.0, 3.0]);
        let s = g.dot(p, p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(p).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let p = vecvar(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(p), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::new();
        let a = vecvar(&mut g, &[1.0, 2.0]);
        let b = vecvar(&mut g, &[1.0]);
        assert!(g.add(a, b).is_err());
        assert!(g.matvec(a, b).is_err());
    }

    #[test]
    fn elementwise_primitives_match_finite_differences() {
        let a = vec![0.3, -0.7, 1.2, 0.05];
        let b = vec![-0.4, 0.9, 0.1, 2.0];
        check(&[a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let m = g.mul(s, v[0]).unwrap();
            let d = g.sub(m, v[1]).unwrap();
            let t = g.tanh(d);
            let sg = g.sigmoid(v[1]);
            let r = g.relu(v[0]);
            let x = g.mul(t, sg).unwrap();
            let x = g.add(x, r).unwrap();
            let x = g.scale(x, 0.7);
            g.sum(x)
        });
    }

    #[test]
    fn matrix_primitives_match_finite_differences() {
        let w: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = vec![0.2, -0.5, 0.8];
        let y = vec![0.1, 0.4, -0.3, 0.6];
        check(&[w, x, y], |g, v| {
            let wm = {
                let r0 = g.slice(v[0], 0, 3).unwrap();
                let r1 = g.slice(v[0], 3, 3).unwrap();
                g.stack(&[r0, r1]).unwrap()
            };
            let mv = g.matvec(wm, v[1]).unwrap();
            let wt = g.transpose(wm).unwrap();
            let prod = g.matmul(wm, wt).unwrap();
            let sm = g.softmax(prod);
            let row = g.row(sm, 1).unwrap();
            let mean = g.mean_rows(sm).unwrap();
            let c = g.concat(&[mv, row]).unwrap();
            let c2 = g.concat(&[mean, mv]).unwrap();
            let e = g.mul(c, c2).unwrap();
            let ce = g.cross_entropy(v[2], 2).unwrap();
            let s = g.sum(e);
            let d = g.dot(v[2], v[2]).unwrap();
            let masked = g.mask_mul(v[2], vec![2.0, 0.0, 2.0, 0.0]).unwrap();
            let ms = g.sum(masked);
            g.add_all(&[s, ce, d, ms]).unwrap()
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let m = g.input(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -100.0, 0.0, 100.0]).unwrap());
        let s = g.softmax(m);
        let t = g.value(s);
        for r in 0..2 {
            let sum: f64 = t.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(t.row(r).iter().all(|&x| x >= 0.0));
        }
    }
}
