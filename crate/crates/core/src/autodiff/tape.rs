use std::cell::RefCell;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use super::{AutodiffError, Result};

/// Handle into a [`Tape`]. Cheap to copy; only valid for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // some fields exist for debuggability only
enum Op {
    Leaf,
    StopGrad(Var),
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    BroadcastRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize, len: usize },
    ClipMin(Var, f64),
    Clamp(Var, f64, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a gradient path to some `param` leaf exists. `stop_grad`
    /// forces this off, which is what makes everything behind it receive an
    /// exactly-zero gradient.
    needs: bool,
}

struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Single-use reverse-mode tape. Build the forward pass through the op
/// methods, call [`Tape::backward`] once on a scalar loss, then read gradients
/// of `param` leaves with [`Tape::grad`].
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: RefCell::new(Inner { nodes: Vec::with_capacity(128), grads: Vec::new() }) }
    }

    fn push(&self, value: Tensor, op: Op, needs: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op, needs });
        Ok(Var(inner.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.0].needs
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant leaf: no gradient is tracked for it.
    pub fn constant(&self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Parameter leaf: gradients accumulate here during `backward`.
    pub fn param(&self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "param")
    }

    pub fn scalar_const(&self, x: f64) -> Result<Var> {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.inner.borrow().nodes[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.borrow().nodes[v.0].value)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.inner.borrow().nodes[v.0].value.item()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    /// Identity in the forward pass; blocks the backward pass completely.
    pub fn stop_grad(&self, v: Var) -> Result<Var> {
        let value = self.value(v);
        self.push(value, Op::StopGrad(v), false, "stop_grad")
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k, k2, n, out) = {
            let inner = self.inner.borrow();
            let ta = &inner.nodes[a.0].value;
            let tb = &inner.nodes[b.0].value;
            if ta.shape().len() != 2 || tb.shape().len() != 2 {
                return Err(AutodiffError::Shape {
                    op: "matmul",
                    msg: format!("want rank-2 operands, got {:?} and {:?}", ta.shape(), tb.shape()),
                });
            }
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let (k2, n) = (tb.shape()[0], tb.shape()[1]);
            if k != k2 {
                return Err(AutodiffError::Shape {
                    op: "matmul",
                    msg: format!("inner dims differ: {:?} @ {:?}", ta.shape(), tb.shape()),
                });
            }
            let mut out = Tensor::zeros(&[m, n]);
            matmul(ta.data(), tb.data(), m, k, n, out.data_mut());
            (m, k, k2, n, out)
        };
        let _ = (m, k2, n, k);
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Matmul(a, b), needs, "matmul")
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.nodes[a.0].value;
            let tb = &inner.nodes[b.0].value;
            if ta.shape() != tb.shape() {
                return Err(AutodiffError::Shape {
                    op: name,
                    msg: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                });
            }
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(ta.shape(), data)?
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(out, op, needs, name)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise min; at ties the gradient goes to the first argument.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    /// Elementwise max; at ties the gradient goes to the first argument.
    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", |x, y| if x >= y { x } else { y }, Op::Maximum(a, b))
    }

    fn unary(
        &self,
        a: Var,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.nodes[a.0].value;
            let data = ta.data().iter().map(|&x| f(x)).collect();
            Tensor::from_vec(ta.shape(), data)?
        };
        let needs = self.needs(a);
        self.push(out, op, needs, name)
    }

    pub fn scale(&self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, "scale", |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, "add_scalar", |x| x + k, Op::AddScalar(a, k))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    /// Subgradient at 0 is 0.
    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    /// `min(c, x)` elementwise. Gradient is 1 where `x <= c` (pass-through on
    /// ties) and 0 on the clipped branch.
    pub fn clip_min(&self, c: f64, a: Var) -> Result<Var> {
        self.unary(a, "clip_min", |x| if x <= c { x } else { c }, Op::ClipMin(a, c))
    }

    /// Clamp into `[lo, hi]`. Gradient is 1 inside (boundaries included), 0
    /// outside.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, "clamp", |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    fn rows_cols(shape: &[usize]) -> (usize, usize) {
        match shape.len() {
            2 => (shape[0], shape[1]),
            1 => (1, shape[0]),
            _ => (1, 1),
        }
    }

    /// Row-wise softmax over the last axis (vectors are one row).
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.nodes[a.0].value;
            let (r, c) = Self::rows_cols(ta.shape());
            let mut data = vec![0.0; ta.len()];
            for i in 0..r {
                let row = &ta.data()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (o, &x) in data[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o = (x - m).exp();
                    s += *o;
                }
                for o in &mut data[i * c..(i + 1) * c] {
                    *o /= s;
                }
            }
            Tensor::from_vec(ta.shape(), data)?
        };
        let needs = self.needs(a);
        self.push(out, Op::Softmax(a), needs, "softmax")
    }

    /// Row-wise log-softmax over the last axis; numerically stable.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.nodes[a.0].value;
            let (r, c) = Self::rows_cols(ta.shape());
            let mut data = vec![0.0; ta.len()];
            for i in 0..r {
                let row = &ta.data()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for &x in row {
                    s += (x - m).exp();
                }
                let lse = m + s.ln();
                for (o, &x) in data[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o = x - lse;
                }
            }
            Tensor::from_vec(ta.shape(), data)?
        };
        let needs = self.needs(a);
        self.push(out, Op::LogSoftmax(a), needs, "log_softmax")
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let mut acc = 0.0;
            for &x in inner.nodes[a.0].value.data() {
                acc += x;
            }
            Tensor::scalar(acc)
        };
        let needs = self.needs(a);
        self.push(out, Op::Sum(a), needs, "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.0].value;
            if t.is_empty() {
                return Err(AutodiffError::Shape { op: "mean", msg: "empty tensor".into() });
            }
            let mut acc = 0.0;
            for &x in t.data() {
                acc += x;
            }
            Tensor::scalar(acc / t.len() as f64)
        };
        let needs = self.needs(a);
        self.push(out, Op::Mean(a), needs, "mean")
    }

    /// `[b,k] -> [b]`, summing each row left to right.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.0].value;
            if t.shape().len() != 2 {
                return Err(AutodiffError::Shape {
                    op: "sum_rows",
                    msg: format!("want rank 2, got {:?}", t.shape()),
                });
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let mut data = vec![0.0; r];
            for i in 0..r {
                let mut acc = 0.0;
                for &x in &t.data()[i * c..(i + 1) * c] {
                    acc += x;
                }
                data[i] = acc;
            }
            Tensor::from_vec(&[r], data)?
        };
        let needs = self.needs(a);
        self.push(out, Op::SumRows(a), needs, "sum_rows")
    }

    /// `[k] -> [rows,k]` by repetition.
    pub fn broadcast_rows(&self, a: Var, rows: usize) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.0].value;
            if t.shape().len() != 1 {
                return Err(AutodiffError::Shape {
                    op: "broadcast_rows",
                    msg: format!("want rank 1, got {:?}", t.shape()),
                });
            }
            let k = t.shape()[0];
            let mut data = Vec::with_capacity(rows * k);
            for _ in 0..rows {
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(&[rows, k], data)?
        };
        let needs = self.needs(a);
        self.push(out, Op::BroadcastRows(a, rows), needs, "broadcast_rows")
    }

    /// Pick `src[i, idx[i]]` for each row -> `[b]`.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.0].value;
            if t.shape().len() != 2 || t.shape()[0] != idx.len() {
                return Err(AutodiffError::Shape {
                    op: "gather_rows",
                    msg: format!("shape {:?} with {} indices", t.shape(), idx.len()),
                });
            }
            let c = t.shape()[1];
            let mut data = vec![0.0; idx.len()];
            for (i, &j) in idx.iter().enumerate() {
                if j >= c {
                    return Err(AutodiffError::Shape {
                        op: "gather_rows",
                        msg: format!("index {} out of {} columns", j, c),
                    });
                }
                data[i] = t.data()[i * c + j];
            }
            Tensor::from_vec(&[idx.len()], data)?
        };
        let needs = self.needs(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), needs, "gather_rows")
    }

    /// Concatenate along `axis` (0 or 1). Rank-1 inputs use axis 0.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Shape { op: "concat", msg: "no inputs".into() });
        }
        let out = {
            let inner = self.inner.borrow();
            let first = &inner.nodes[parts[0].0].value;
            let rank = first.shape().len();
            if axis >= rank.max(1) {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    msg: format!("axis {} on rank {}", axis, rank),
                });
            }
            if rank == 1 {
                let mut data = Vec::new();
                for p in parts {
                    let t = &inner.nodes[p.0].value;
                    if t.shape().len() != 1 {
                        return Err(AutodiffError::Shape { op: "concat", msg: "mixed ranks".into() });
                    }
                    data.extend_from_slice(t.data());
                }
                let n = data.len();
                Tensor::from_vec(&[n], data)?
            } else if axis == 0 {
                let cols = first.shape()[1];
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = &inner.nodes[p.0].value;
                    if t.shape().len() != 2 || t.shape()[1] != cols {
                        return Err(AutodiffError::Shape {
                            op: "concat",
                            msg: format!("row concat wants [_, {}], got {:?}", cols, t.shape()),
                        });
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(&[rows, cols], data)?
            } else {
                let rows = first.shape()[0];
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = &inner.nodes[p.0].value;
                    if t.shape().len() != 2 || t.shape()[0] != rows {
                        return Err(AutodiffError::Shape {
                            op: "concat",
                            msg: format!("col concat wants [{}, _], got {:?}", rows, t.shape()),
                        });
                    }
                    widths.push(t.shape()[1]);
                }
                let total: usize = widths.iter().sum();
                let mut data = vec![0.0; rows * total];
                for i in 0..rows {
                    let mut off = 0;
                    for (p, &w) in parts.iter().zip(&widths) {
                        let t = &inner.nodes[p.0].value;
                        data[i * total + off..i * total + off + w]
                            .copy_from_slice(&t.data()[i * w..(i + 1) * w]);
                        off += w;
                    }
                }
                Tensor::from_vec(&[rows, total], data)?
            }
        };
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(out, Op::Concat(parts.to_vec(), axis), needs, "concat")
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[src.0].value;
            match (t.shape().len(), axis) {
                (1, 0) => {
                    let n = t.shape()[0];
                    if start + len > n {
                        return Err(AutodiffError::Shape {
                            op: "slice",
                            msg: format!("[{start}, {}) out of length {n}", start + len),
                        });
                    }
                    Tensor::from_vec(&[len], t.data()[start..start + len].to_vec())?
                }
                (2, 0) => {
                    let (r, c) = (t.shape()[0], t.shape()[1]);
                    if start + len > r {
                        return Err(AutodiffError::Shape {
                            op: "slice",
                            msg: format!("rows [{start}, {}) out of {r}", start + len),
                        });
                    }
                    Tensor::from_vec(&[len, c], t.data()[start * c..(start + len) * c].to_vec())?
                }
                (2, 1) => {
                    let (r, c) = (t.shape()[0], t.shape()[1]);
                    if start + len > c {
                        return Err(AutodiffError::Shape {
                            op: "slice",
                            msg: format!("cols [{start}, {}) out of {c}", start + len),
                        });
                    }
                    let mut data = Vec::with_capacity(r * len);
                    for i in 0..r {
                        data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
                    }
                    Tensor::from_vec(&[r, len], data)?
                }
                (rank, axis) => {
                    return Err(AutodiffError::Shape {
                        op: "slice",
                        msg: format!("axis {axis} on rank {rank}"),
                    })
                }
            }
        };
        let needs = self.needs(src);
        self.push(out, Op::Slice { src, axis, start, len }, needs, "slice")
    }

    /// Reverse pass from a scalar loss. Gradients of `param` leaves are kept
    /// and can be read with [`Tape::grad`]; intermediate gradients are freed
    /// as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let Inner { nodes, grads } = &mut *inner;
        {
            let t = &nodes[loss.0].value;
            if !t.is_scalar() {
                return Err(AutodiffError::NonScalarLoss { shape: t.shape().to_vec() });
            }
        }
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !nodes[id].needs && !matches!(nodes[id].op, Op::Leaf) {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let op = nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    // Keep the accumulated gradient readable for params.
                    grads[id] = Some(g);
                    continue;
                }
                Op::StopGrad(_) => {}
                Op::Matmul(a, b) => {
                    let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                    let n = nodes[b.0].value.shape()[1];
                    if nodes[a.0].needs {
                        let slot = grads[a.0].get_or_insert_with(|| vec![0.0; m * k]);
                        matmul_nt(&g, nodes[b.0].value.data(), m, n, k, slot);
                    }
                    if nodes[b.0].needs {
                        let slot = grads[b.0].get_or_insert_with(|| vec![0.0; k * n]);
                        matmul_tn(nodes[a.0].value.data(), &g, k, m, n, slot);
                    }
                }
                Op::Add(a, b) => {
                    for p in [a, b] {
                        if nodes[p.0].needs {
                            accumulate(grads, p.0, g.len(), |s| {
                                for (o, &x) in s.iter_mut().zip(&g) {
                                    *o += x;
                                }
                            });
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.0].needs {
                        accumulate(grads, a.0, g.len(), |s| {
                            for (o, &x) in s.iter_mut().zip(&g) {
                                *o += x;
                            }
                        });
                    }
                    if nodes[b.0].needs {
                        accumulate(grads, b.0, g.len(), |s| {
                            for (o, &x) in s.iter_mut().zip(&g) {
                                *o -= x;
                            }
                        });
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].needs {
                        let bv = nodes[b.0].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for ((o, &x), &y) in s.iter_mut().zip(&g).zip(bv) {
                                *o += x * y;
                            }
                        });
                    }
                    if nodes[b.0].needs {
                        let av = nodes[a.0].value.data();
                        accumulate(grads, b.0, g.len(), |s| {
                            for ((o, &x), &y) in s.iter_mut().zip(&g).zip(av) {
                                *o += x * y;
                            }
                        });
                    }
                }
                Op::Minimum(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if nodes[a.0].needs {
                        accumulate(grads, a.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if av[i] <= bv[i] {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                    if nodes[b.0].needs {
                        accumulate(grads, b.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if !(av[i] <= bv[i]) {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Maximum(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if nodes[a.0].needs {
                        accumulate(grads, a.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if av[i] >= bv[i] {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                    if nodes[b.0].needs {
                        accumulate(grads, b.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if !(av[i] >= bv[i]) {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Scale(a, kf) => {
                    if nodes[a.0].needs {
                        accumulate(grads, a.0, g.len(), |s| {
                            for (o, &x) in s.iter_mut().zip(&g) {
                                *o += kf * x;
                            }
                        });
                    }
                }
                Op::AddScalar(a, _) => {
                    if nodes[a.0].needs {
                        accumulate(grads, a.0, g.len(), |s| {
                            for (o, &x) in s.iter_mut().zip(&g) {
                                *o += x;
                            }
                        });
                    }
                }
                Op::Tanh(a) => {
                    if nodes[a.0].needs {
                        let y = nodes[id].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for ((o, &x), &yy) in s.iter_mut().zip(&g).zip(y) {
                                *o += x * (1.0 - yy * yy);
                            }
                        });
                    }
                }
                Op::Relu(a) => {
                    if nodes[a.0].needs {
                        let xv = nodes[a.0].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if xv[i] > 0.0 {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Exp(a) => {
                    if nodes[a.0].needs {
                        let y = nodes[id].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for ((o, &x), &yy) in s.iter_mut().zip(&g).zip(y) {
                                *o += x * yy;
                            }
                        });
                    }
                }
                Op::Log(a) => {
                    if nodes[a.0].needs {
                        let xv = nodes[a.0].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for ((o, &x), &xx) in s.iter_mut().zip(&g).zip(xv) {
                                *o += x / xx;
                            }
                        });
                    }
                }
                Op::Softmax(a) => {
                    if nodes[a.0].needs {
                        let y = nodes[id].value.data();
                        let (r, c) = Tape::rows_cols(nodes[id].value.shape());
                        accumulate(grads, a.0, g.len(), |s| {
                            for i in 0..r {
                                let yr = &y[i * c..(i + 1) * c];
                                let gr = &g[i * c..(i + 1) * c];
                                let mut dot = 0.0;
                                for (&gg, &yy) in gr.iter().zip(yr) {
                                    dot += gg * yy;
                                }
                                let sr = &mut s[i * c..(i + 1) * c];
                                for ((o, &gg), &yy) in sr.iter_mut().zip(gr).zip(yr) {
                                    *o += (gg - dot) * yy;
                                }
                            }
                        });
                    }
                }
                Op::LogSoftmax(a) => {
                    if nodes[a.0].needs {
                        let y = nodes[id].value.data();
                        let (r, c) = Tape::rows_cols(nodes[id].value.shape());
                        accumulate(grads, a.0, g.len(), |s| {
                            for i in 0..r {
                                let yr = &y[i * c..(i + 1) * c];
                                let gr = &g[i * c..(i + 1) * c];
                                let mut gsum = 0.0;
                                for &gg in gr {
                                    gsum += gg;
                                }
                                let sr = &mut s[i * c..(i + 1) * c];
                                for ((o, &gg), &yy) in sr.iter_mut().zip(gr).zip(yr) {
                                    *o += gg - yy.exp() * gsum;
                                }
                            }
                        });
                    }
                }
                Op::Sum(a) => {
                    if nodes[a.0].needs {
                        let n = nodes[a.0].value.len();
                        let gg = g[0];
                        accumulate(grads, a.0, n, |s| {
                            for o in s.iter_mut() {
                                *o += gg;
                            }
                        });
                    }
                }
                Op::Mean(a) => {
                    if nodes[a.0].needs {
                        let n = nodes[a.0].value.len();
                        let gg = g[0] / n as f64;
                        accumulate(grads, a.0, n, |s| {
                            for o in s.iter_mut() {
                                *o += gg;
                            }
                        });
                    }
                }
                Op::SumRows(a) => {
                    if nodes[a.0].needs {
                        let (r, c) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                        accumulate(grads, a.0, r * c, |s| {
                            for i in 0..r {
                                let gi = g[i];
                                for o in &mut s[i * c..(i + 1) * c] {
                                    *o += gi;
                                }
                            }
                        });
                    }
                }
                Op::BroadcastRows(a, rows) => {
                    if nodes[a.0].needs {
                        let k = nodes[a.0].value.len();
                        accumulate(grads, a.0, k, |s| {
                            for i in 0..rows {
                                for (o, &x) in s.iter_mut().zip(&g[i * k..(i + 1) * k]) {
                                    *o += x;
                                }
                            }
                        });
                    }
                }
                Op::GatherRows(a, idx) => {
                    if nodes[a.0].needs {
                        let (r, c) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                        accumulate(grads, a.0, r * c, |s| {
                            for (i, &j) in idx.iter().enumerate() {
                                s[i * c + j] += g[i];
                            }
                        });
                    }
                }
                Op::Concat(parts, axis) => {
                    let rank = nodes[id].value.shape().len();
                    if rank == 1 || axis == 0 {
                        let mut off = 0;
                        for p in &parts {
                            let len = nodes[p.0].value.len();
                            if nodes[p.0].needs {
                                let gp = &g[off..off + len];
                                accumulate(grads, p.0, len, |s| {
                                    for (o, &x) in s.iter_mut().zip(gp) {
                                        *o += x;
                                    }
                                });
                            }
                            off += len;
                        }
                    } else {
                        let rows = nodes[id].value.shape()[0];
                        let total = nodes[id].value.shape()[1];
                        let mut off = 0;
                        for p in &parts {
                            let w = nodes[p.0].value.shape()[1];
                            if nodes[p.0].needs {
                                accumulate(grads, p.0, rows * w, |s| {
                                    for i in 0..rows {
                                        let gp = &g[i * total + off..i * total + off + w];
                                        for (o, &x) in s[i * w..(i + 1) * w].iter_mut().zip(gp) {
                                            *o += x;
                                        }
                                    }
                                });
                            }
                            off += w;
                        }
                    }
                }
                Op::Slice { src, axis, start, len } => {
                    if nodes[src.0].needs {
                        let shape = nodes[src.0].value.shape().to_vec();
                        let total = nodes[src.0].value.len();
                        accumulate(grads, src.0, total, |s| match (shape.len(), axis) {
                            (1, 0) => {
                                for (o, &x) in s[start..start + len].iter_mut().zip(&g) {
                                    *o += x;
                                }
                            }
                            (2, 0) => {
                                let c = shape[1];
                                for (o, &x) in s[start * c..(start + len) * c].iter_mut().zip(&g) {
                                    *o += x;
                                }
                            }
                            (2, 1) => {
                                let c = shape[1];
                                let r = shape[0];
                                for i in 0..r {
                                    for (o, &x) in s[i * c + start..i * c + start + len]
                                        .iter_mut()
                                        .zip(&g[i * len..(i + 1) * len])
                                    {
                                        *o += x;
                                    }
                                }
                            }
                            _ => unreachable!(),
                        });
                    }
                }
                Op::ClipMin(a, c) => {
                    if nodes[a.0].needs {
                        let xv = nodes[a.0].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if xv[i] <= c {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if nodes[a.0].needs {
                        let xv = nodes[a.0].value.data();
                        accumulate(grads, a.0, g.len(), |s| {
                            for (i, o) in s.iter_mut().enumerate() {
                                if xv[i] >= lo && xv[i] <= hi {
                                    *o += g[i];
                                }
                            }
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of a leaf after `backward`. Params that took part in the graph
    /// but received no gradient flow report zeros; constants report `None`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.0];
        if !node.needs {
            return None;
        }
        let shape = node.value.shape().to_vec();
        match inner.grads.get(v.0) {
            Some(Some(g)) => Some(Tensor::from_vec(&shape, g.clone()).expect("grad shape")),
            _ => Some(Tensor::zeros(&shape)),
        }
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    len: usize,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}
