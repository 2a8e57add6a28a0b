//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is rebuilt for every training step. Operations evaluate eagerly
//! and append a node; nodes are stored in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probabilities below this are clamped before taking a logarithm.
pub const EPS_LOG: f64 = 1e-12;
/// Vectors with a smaller L2 norm have cosine 0 and no gradient.
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    ScalarLhs,
    ScalarRhs,
    RowLhs,
    RowRhs,
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Self, Vec<usize>)> {
        let is_scalar = |s: &[usize]| s.iter().all(|&d| d == 1);
        // row vector of width n: [n] or [1, n]
        let row_of = |s: &[usize]| match *s {
            [n] => Some(n),
            [1, n] => Some(n),
            _ => None,
        };
        if a == b {
            return Ok((Bcast::Same, a.to_vec()));
        }
        if is_scalar(b) {
            return Ok((Bcast::ScalarRhs, a.to_vec()));
        }
        if is_scalar(a) {
            return Ok((Bcast::ScalarLhs, b.to_vec()));
        }
        if let ([_, n], Some(w)) = (a, row_of(b)) {
            if *n == w {
                return Ok((Bcast::RowRhs, a.to_vec()));
            }
        }
        if let (Some(w), [_, n]) = (row_of(a), b) {
            if *n == w {
                return Ok((Bcast::RowLhs, b.to_vec()));
            }
        }
        Err(Error::shape(op, a, b))
    }

    #[inline]
    fn lhs_index(self, k: usize, width: usize) -> usize {
        match self {
            Bcast::Same | Bcast::ScalarRhs | Bcast::RowRhs => k,
            Bcast::ScalarLhs => 0,
            Bcast::RowLhs => k % width,
        }
    }

    #[inline]
    fn rhs_index(self, k: usize, width: usize) -> usize {
        match self {
            Bcast::Same | Bcast::ScalarLhs | Bcast::RowLhs => k,
            Bcast::ScalarRhs => 0,
            Bcast::RowRhs => k % width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinOp, Var, Var, Bcast),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    Cosine(Var, Var),
    Row(Var, usize),
    MeanRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Stack(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph for one forward/backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations, leaves excluded.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        };
        let (av, bv) = (self.value(a), self.value(b));
        let (bc, shape) = Bcast::resolve(name, av.shape(), bv.shape())?;
        let width = *shape.last().unwrap_or(&1);
        let numel: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let out: Vec<f64> = (0..numel)
            .map(|k| {
                let x = ad[bc.lhs_index(k, width)];
                let y = bd[bc.rhs_index(k, width)];
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Binary(op, a, b, bc), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    /// `a * factor` for a constant factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// `a + offset` for a constant offset.
    pub fn shift(&mut self, a: Var, offset: f64) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x + offset).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Shift(a), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, math::exp, Op::Exp(a))
    }

    /// Natural log with inputs in `[0, EPS_LOG)` raised to `EPS_LOG`.
    /// Negative or NaN inputs are a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self
            .value(a)
            .data()
            .iter()
            .find(|x| x.is_nan() || **x < 0.0)
        {
            return Err(Error::NumericDomain {
                op: "log",
                value: bad,
            });
        }
        Ok(self.map(a, |x| math::ln(x.max(EPS_LOG)), Op::Log(a)))
    }

    /// `max(a, floor)` elementwise; clamped entries pass no gradient.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| if x < floor { floor } else { x }, Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum();
        let m = s / v.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Row-wise log-softmax of an `n x C` matrix, stabilized by subtracting
    /// the row maximum.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (n, c) = v.dims2()?;
        if c < 2 {
            return Err(Error::shape("log_softmax", v.shape(), &[n, 2]));
        }
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|x| math::exp(x - max)).sum::<f64>());
            out.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    /// Cosine similarity of two equal-length vectors. Returns 0 with zero
    /// gradient when either norm is below [`EPS_NORM`].
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.numel() != vv.numel() || uv.numel() == 0 {
            return Err(Error::shape("cosine", uv.shape(), vv.shape()));
        }
        let c = cosine_raw(uv.data(), vv.data());
        let rg = self.rg(&[u, v]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(u, v), rg))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let v = self.value(a);
        let (n, _) = v.dims2()?;
        if i >= n {
            return Err(Error::shape("row", v.shape(), &[i]));
        }
        let value = Tensor::vector(v.row(i).to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Row(a, i), rg))
    }

    /// Arithmetic mean of the selected rows of a matrix.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let (n, d) = v.dims2()?;
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::shape("mean_rows", v.shape(), rows));
        }
        let mut acc = vec![0.0; d];
        for &r in rows {
            for (s, x) in acc.iter_mut().zip(v.row(r)) {
                *s += x;
            }
        }
        let k = rows.len() as f64;
        acc.iter_mut().for_each(|s| *s /= k);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(acc), Op::MeanRows(a, rows.to_vec()), rg))
    }

    /// Selects `a[i, cols[i]]` for every row `i`, giving a length-`n` vector.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let (n, c) = v.dims2()?;
        if cols.len() != n {
            return Err(Error::shape("pick", v.shape(), &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Label {
                label: bad,
                classes: c,
            });
        }
        let out = cols.iter().enumerate().map(|(i, &j)| v.row(i)[j]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(out), Op::Pick(a, cols.to_vec()), rg))
    }

    /// Packs scalars into a vector.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(items.len());
        for &s in items {
            let v = self.value(s);
            if v.numel() != 1 {
                return Err(Error::shape("stack", v.shape(), &[1]));
            }
            out.push(v.item());
        }
        let rg = self.rg(items);
        Ok(self.push(Tensor::vector(out), Op::Stack(items.to_vec()), rg))
    }

    /// Reverse sweep from a scalar output. Every node created with
    /// `requires_grad` gets a gradient, zero when unreachable from `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::shape("backward", out.shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                    Tensor::new(node.value.shape().to_vec(), data).expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = av.dims2().expect("rank 2");
                let n = bv.shape()[1];
                // dA = dC · Bᵀ
                acc(*a, &|s| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut t = 0.0;
                            for j in 0..n {
                                t += g[i * n + j] * bv.data()[p * n + j];
                            }
                            s[i * k + p] += t;
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &|s| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av.data()[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let row = &g[i * n..(i + 1) * n];
                            for (sj, gj) in s[p * n..(p + 1) * n].iter_mut().zip(row) {
                                *sj += x * gj;
                            }
                        }
                    }
                });
            }
            Op::Binary(op, a, b, bc) => {
                let width = *node.value.shape().last().unwrap_or(&1);
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        let local = match op {
                            BinOp::Add | BinOp::Sub => 1.0,
                            BinOp::Mul => bd[bc.rhs_index(k, width)],
                        };
                        s[bc.lhs_index(k, width)] += gk * local;
                    }
                });
                acc(*b, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        let local = match op {
                            BinOp::Add => 1.0,
                            BinOp::Sub => -1.0,
                            BinOp::Mul => ad[bc.lhs_index(k, width)],
                        };
                        s[bc.rhs_index(k, width)] += gk * local;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &|s| {
                s.iter_mut().zip(g).for_each(|(x, gk)| *x += gk * f);
            }),
            Op::Shift(a) => acc(*a, &|s| {
                s.iter_mut().zip(g).for_each(|(x, gk)| *x += gk);
            }),
            Op::Relu(a) => {
                let ad = nodes[a.0].value.data();
                acc(*a, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        if ad[k] > 0.0 {
                            s[k] += gk;
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        s[k] += gk * y[k];
                    }
                });
            }
            Op::Log(a) => {
                let ad = nodes[a.0].value.data();
                acc(*a, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        if ad[k] >= EPS_LOG {
                            s[k] += gk / ad[k];
                        }
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let ad = nodes[a.0].value.data();
                acc(*a, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        if ad[k] >= *floor {
                            s[k] += gk;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.numel() as f64;
                acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let (n, c) = y.dims2().expect("rank 2");
                acc(*a, &|s| {
                    for i in 0..n {
                        let gi = &g[i * c..(i + 1) * c];
                        let total: f64 = gi.iter().sum();
                        for j in 0..c {
                            s[i * c + j] += gi[j] - math::exp(y.data()[i * c + j]) * total;
                        }
                    }
                });
            }
            Op::Cosine(u, v) => {
                let (ud, vd) = (nodes[u.0].value.data(), nodes[v.0].value.data());
                let nu = norm(ud);
                let nv = norm(vd);
                if nu < EPS_NORM || nv < EPS_NORM {
                    return;
                }
                let c = node.value.item();
                let g0 = g[0];
                // d cos / du = v / (|u||v|) - cos * u / |u|^2
                acc(*u, &|s| {
                    for k in 0..ud.len() {
                        s[k] += g0 * (vd[k] / (nu * nv) - c * ud[k] / (nu * nu));
                    }
                });
                acc(*v, &|s| {
                    for k in 0..vd.len() {
                        s[k] += g0 * (ud[k] / (nu * nv) - c * vd[k] / (nv * nv));
                    }
                });
            }
            Op::Row(a, i) => {
                let d = g.len();
                acc(*a, &|s| {
                    for (x, gk) in s[i * d..(i + 1) * d].iter_mut().zip(g) {
                        *x += gk;
                    }
                });
            }
            Op::MeanRows(a, rows) => {
                let d = g.len();
                let k = rows.len() as f64;
                acc(*a, &|s| {
                    for &r in rows {
                        for (x, gk) in s[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *x += gk / k;
                        }
                    }
                });
            }
            Op::Pick(a, cols) => {
                let c = nodes[a.0].value.shape()[1];
                acc(*a, &|s| {
                    for (i, &j) in cols.iter().enumerate() {
                        s[i * c + j] += g[i];
                    }
                });
            }
            Op::Stack(items) => {
                for (k, &item) in items.iter().enumerate() {
                    acc(item, &|s| s[0] += g[k]);
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for nodes that do not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

pub(crate) fn cosine_raw(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu < EPS_NORM || nv < EPS_NORM {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot / (nu * nv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = t.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c).data(), [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_orthogonal_rows() {
        let mut t = Tape::new();
        let a = t.constant(mat(&[&[1.0, 0.0]]));
        let b = t.constant(mat(&[&[0.0], &[5.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), [0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, [2, 3]);
                assert_eq!(rhs, [2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relu_dead_region() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(-3.0));
        let y = t.relu(x);
        assert_eq!(t.value(y).item(), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn sum_value_and_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = t.sum(x);
        assert_eq!(t.value(s).item(), 6.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn log_guards_and_rejects() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0.0]));
        let y = t.log(z).unwrap();
        assert!((t.value(y).item() - libm::log(EPS_LOG)).abs() < 1e-15);
        let neg = t.constant(Tensor::vector(vec![-1.0]));
        assert!(matches!(t.log(neg), Err(Error::NumericDomain { .. })));
    }

    #[test]
    fn log_softmax_symmetric_and_stable() {
        let mut t = Tape::new();
        let x = t.constant(mat(&[&[0.0, 0.0], &[1000.0, 0.0]]));
        let y = t.log_softmax(x).unwrap();
        let v = t.value(y).data();
        let half = libm::log(0.5);
        assert!((v[0] - half).abs() < 1e-15 && (v[1] - half).abs() < 1e-15);
        assert!(v[2].abs() < 1e-12);
        assert!((v[3] + 1000.0).abs() < 1e-9);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn log_softmax_needs_two_classes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 1]));
        assert!(t.log_softmax(x).is_err());
    }

    #[test]
    fn cosine_cases() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let v = t.constant(Tensor::vector(vec![0.0, 1.0]));
        let w = t.constant(Tensor::vector(vec![-1.0, 0.0]));
        let p = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let c_uv = t.cosine(u, v).unwrap();
        let c_uw = t.cosine(u, w).unwrap();
        let c_pp = t.cosine(p, p).unwrap();
        assert_eq!(t.value(c_uv).item(), 0.0);
        assert_eq!(t.value(c_uw).item(), -1.0);
        assert!((t.value(c_pp).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_degenerate_is_zero_with_zero_grad() {
        let mut t = Tape::new();
        let u = t.param(Tensor::vector(vec![0.0, 0.0]));
        let v = t.param(Tensor::vector(vec![1.0, 2.0]));
        let c = t.cosine(u, v).unwrap();
        assert_eq!(t.value(c).item(), 0.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.get(u).unwrap().data(), [0.0, 0.0]);
        assert_eq!(g.get(v).unwrap().data(), [0.0, 0.0]);
    }

    #[test]
    fn row_broadcast_add() {
        let mut t = Tape::new();
        let m = t.param(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.param(Tensor::vector(vec![10.0, 20.0]));
        let y = t.add(m, b).unwrap();
        assert_eq!(t.value(y).data(), [11.0, 22.0, 13.0, 24.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), [2.0, 2.0]);
    }

    #[test]
    fn unsupported_broadcast_errors() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn reused_tensor_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let z = t.add(y, x).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.param(Tensor::zeros(&[2, 2]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap().shape(), [2, 2]);
        assert!(g.get(unused).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn op_count_excludes_leaves() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(1.0));
        let y = t.exp(x);
        let _ = t.sum(y);
        assert_eq!(t.op_count(), 2);
        assert_eq!(t.len(), 3);
    }
}
