//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every differentiable op appends a node to the [`Tape`]; node ids are
//! assigned in execution order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep. The tape is
//! rebuilt for every forward pass.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use super::NumericsError;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu(usize),
    Embedding { table: usize, ids: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Transpose(usize),
    Log(usize),
    Exp(usize),
    MaskedFill { x: usize, mask: Vec<bool> },
    Sum(usize),
    Pick { x: usize, idx: Vec<usize> },
    ScalarFn { x: usize, local_grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Gradients of one backward pass, one entry per `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_leaf: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.by_leaf.get(&v.id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push_checked(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, rg: bool) -> Result<Var<'_>, NumericsError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, op, rg))
    }

    /// A differentiable input (a model parameter).
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. Gradients are summed over all
    /// paths; leaves the loss does not reach receive zeros.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NumericsError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(NumericsError::Contract("loss belongs to another tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], id: usize, n: usize) -> &mut Vec<f64> {
            grads[id].get_or_insert_with(|| vec![0.0; n])
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let wants = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if wants(*a) {
                        matmul_nt_into(&g, bv.data(), acc(&mut grads, *a, m * k), m, n, k);
                    }
                    if wants(*b) {
                        matmul_tn_into(av.data(), &g, acc(&mut grads, *b, k * n), m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    for &x in [a, b] {
                        if wants(x) {
                            for (o, v) in acc(&mut grads, x, g.len()).iter_mut().zip(&g) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::AddRow(x, b) => {
                    if wants(*x) {
                        for (o, v) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                            *o += v;
                        }
                    }
                    if wants(*b) {
                        let n = val(*b).numel();
                        let gb = acc(&mut grads, *b, n);
                        for r in g.chunks(n) {
                            for (o, v) in gb.iter_mut().zip(r) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if wants(*x) {
                        for (o, v) in acc(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                            *o += s * v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv.data()[i];
                        }
                    }
                    if wants(*b) {
                        let gb = acc(&mut grads, *b, g.len());
                        for i in 0..g.len() {
                            gb[i] += g[i] * av.data()[i];
                        }
                    }
                }
                Op::Softmax { x, axis } => {
                    if wants(*x) {
                        let y = node.value.data();
                        let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                        let gx = acc(&mut grads, *x, g.len());
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| (o * len + j) * inner + i;
                                let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                                for j in 0..len {
                                    gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    if wants(*x) {
                        let y = node.value.data();
                        let c = node.value.cols();
                        let gx = acc(&mut grads, *x, g.len());
                        for r in 0..g.len() / c {
                            let s: f64 = g[r * c..(r + 1) * c].iter().sum();
                            for j in r * c..(r + 1) * c {
                                gx[j] += g[j] - y[j].exp() * s;
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let d = node.value.cols();
                    let rows = g.len() / d;
                    let gamma = val(*gain).data().to_vec();
                    if wants(*gain) {
                        let gg = acc(&mut grads, *gain, d);
                        for r in 0..rows {
                            for j in 0..d {
                                gg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    }
                    if wants(*bias) {
                        let gb = acc(&mut grads, *bias, d);
                        for r in 0..rows {
                            for j in 0..d {
                                gb[j] += g[r * d + j];
                            }
                        }
                    }
                    if wants(*x) {
                        let gx = acc(&mut grads, *x, g.len());
                        for r in 0..rows {
                            let gh: Vec<f64> = (0..d).map(|j| g[r * d + j] * gamma[j]).collect();
                            let xh = &xhat[r * d..(r + 1) * d];
                            let s1: f64 = gh.iter().sum();
                            let s2: f64 = gh.iter().zip(xh).map(|(a, b)| a * b).sum();
                            let k = inv_std[r] / d as f64;
                            for j in 0..d {
                                gx[r * d + j] += k * (d as f64 * gh[j] - s1 - xh[j] * s2);
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if wants(*x) {
                        let xv = val(*x).data();
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..g.len() {
                            if xv[i] > 0.0 {
                                gx[i] += g[i];
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    if wants(*table) {
                        let tv = val(*table);
                        let d = tv.cols();
                        let gt = acc(&mut grads, *table, tv.numel());
                        for (r, &tok) in ids.iter().enumerate() {
                            for j in 0..d {
                                gt[tok * d + j] += g[r * d + j];
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                    let total = node.value.shape()[*axis];
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        if wants(p) {
                            let gp = acc(&mut grads, p, outer * len * inner);
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                                for (d, s) in gp[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    if wants(*x) {
                        let xv = val(*x);
                        let (outer, total, inner) = axis_split(xv.shape(), *axis);
                        let len = node.value.shape()[*axis];
                        let gx = acc(&mut grads, *x, xv.numel());
                        for o in 0..outer {
                            let dst = &mut gx[(o * total + start) * inner..(o * total + start + len) * inner];
                            for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    if wants(*x) {
                        let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..n {
                            for j in 0..m {
                                gx[j * n + i] += g[i * m + j];
                            }
                        }
                    }
                }
                Op::Log(x) => {
                    if wants(*x) {
                        let xv = val(*x).data();
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..g.len() {
                            gx[i] += g[i] / xv[i];
                        }
                    }
                }
                Op::Exp(x) => {
                    if wants(*x) {
                        let y = node.value.data();
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..g.len() {
                            gx[i] += g[i] * y[i];
                        }
                    }
                }
                Op::MaskedFill { x, mask } => {
                    if wants(*x) {
                        let gx = acc(&mut grads, *x, g.len());
                        for i in 0..g.len() {
                            if !mask[i] {
                                gx[i] += g[i];
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if wants(*x) {
                        let n = val(*x).numel();
                        for o in acc(&mut grads, *x, n).iter_mut() {
                            *o += g[0];
                        }
                    }
                }
                Op::Pick { x, idx } => {
                    if wants(*x) {
                        let xv = val(*x);
                        let c = xv.cols();
                        let gx = acc(&mut grads, *x, xv.numel());
                        for (r, &j) in idx.iter().enumerate() {
                            gx[r * c + j] += g[r];
                        }
                    }
                }
                Op::ScalarFn { x, local_grad } => {
                    if wants(*x) {
                        let gx = acc(&mut grads, *x, local_grad.numel());
                        for (o, v) in gx.iter_mut().zip(local_grad.data()) {
                            *o += g[0] * v;
                        }
                    }
                }
            }
        }

        let mut by_leaf = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let g = match grads.get_mut(id).and_then(Option::take) {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(&shape),
                };
                by_leaf.insert(id, g);
            }
        }
        Ok(Gradients { by_leaf })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn rg(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn check_tape(&self, other: &Var<'_>) -> Result<(), NumericsError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(NumericsError::Contract("operands recorded on different tapes".into()))
        }
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, NumericsError> {
        self.check_tape(&rhs)?;
        let out = super::tensor::matmul(&self.value(), &rhs.value())?;
        Ok(self.tape.push(out, Op::MatMul(self.id, rhs.id), self.rg() || rhs.rg()))
    }

    /// Elementwise sum of equal-shaped operands.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>, NumericsError> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        same_shape(&a, &b, "add")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Add(self.id, rhs.id), self.rg() || rhs.rg())
    }

    /// Adds a vector of width `cols` to every row (bias add).
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, NumericsError> {
        self.check_tape(&row)?;
        let (a, b) = (self.value(), row.value());
        let c = a.cols();
        if b.numel() != c {
            return Err(NumericsError::Shape(format!(
                "add_row: row of {} values for width {c}",
                b.numel()
            )));
        }
        let data = a
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(b.data()).map(|(x, y)| x + y))
            .collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::AddRow(self.id, row.id), self.rg() || row.rg())
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        let data = a.data().iter().map(|v| v * s).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Scale(self.id, s), self.rg())
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>, NumericsError> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        same_shape(&a, &b, "mul")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Mul(self.id, rhs.id), self.rg() || rhs.rg())
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>, NumericsError> {
        let out = super::tensor::softmax(&self.value(), axis)?;
        Ok(self.tape.push(out, Op::Softmax { x: self.id, axis }, self.rg()))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Result<Var<'t>, NumericsError> {
        let out = super::tensor::log_softmax_rows(&self.value())?;
        Ok(self.tape.push(out, Op::LogSoftmax(self.id), self.rg()))
    }

    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>, NumericsError> {
        self.check_tape(&gain)?;
        self.check_tape(&bias)?;
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let d = x.cols();
        if gv.numel() != d || bv.numel() != d {
            return Err(NumericsError::Shape(format!("layer_norm affine width mismatch for d={d}")));
        }
        let rows = x.rows();
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.numel());
        for r in x.data().chunks(d) {
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in r.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let rg = self.rg() || gain.rg() || bias.rg();
        let op = Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, xhat, inv_std };
        self.tape.push_checked(x.shape().to_vec(), out, op, rg)
    }

    pub fn relu(self) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        let data = a.data().iter().map(|&v| v.max(0.0)).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Relu(self.id), self.rg())
    }

    /// Row lookup into an embedding table `[vocab × d]`.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'t>, NumericsError> {
        let t = self.value();
        if t.ndim() != 2 {
            return Err(NumericsError::Shape("embedding table must be a matrix".into()));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::Shape(format!("embedding id {bad} out of range {v}")));
        }
        if ids.is_empty() {
            return Err(NumericsError::Shape("embedding lookup with no ids".into()));
        }
        let data = ids.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let op = Op::Embedding { table: self.id, ids: ids.to_vec() };
        self.tape.push_checked(vec![ids.len(), d], data, op, self.rg())
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Shape("concat of nothing".into()))?;
        let tape = first.tape;
        let vals: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let base = vals[0].shape().to_vec();
        if axis >= base.len() {
            return Err(NumericsError::Shape(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for (p, v) in parts.iter().zip(&vals) {
            first.check_tape(p)?;
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NumericsError::Shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(Var::rg);
        let op = Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis };
        tape.push_checked(shape, data, op, rg)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, NumericsError> {
        let x = self.value();
        if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
            return Err(NumericsError::Shape(format!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                x.shape()
            )));
        }
        let (outer, total, inner) = axis_split(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.tape.push_checked(shape, data, Op::Slice { x: self.id, axis, start }, self.rg())
    }

    pub fn transpose(self) -> Result<Var<'t>, NumericsError> {
        let out = super::tensor::transpose(&self.value())?;
        Ok(self.tape.push(out, Op::Transpose(self.id), self.rg()))
    }

    pub fn log(self) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        let data = a.data().iter().map(|v| v.ln()).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Log(self.id), self.rg())
    }

    pub fn exp(self) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        let data = a.data().iter().map(|v| v.exp()).collect();
        self.tape.push_checked(a.shape().to_vec(), data, Op::Exp(self.id), self.rg())
    }

    /// Replaces entries where `mask` is true with `value`.
    pub fn masked_fill(self, mask: &[bool], value: f64) -> Result<Var<'t>, NumericsError> {
        let a = self.value();
        if mask.len() != a.numel() {
            return Err(NumericsError::Shape(format!(
                "mask of {} entries for {} values",
                mask.len(),
                a.numel()
            )));
        }
        let data = a
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let op = Op::MaskedFill { x: self.id, mask: mask.to_vec() };
        self.tape.push_checked(a.shape().to_vec(), data, op, self.rg())
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Result<Var<'t>, NumericsError> {
        let s = self.value().data().iter().sum();
        self.tape.push_checked(vec![1], vec![s], Op::Sum(self.id), self.rg())
    }

    /// Selects `x[r, idx[r]]` for every row, giving a vector.
    pub fn pick(self, idx: &[usize]) -> Result<Var<'t>, NumericsError> {
        let x = self.value();
        let c = x.cols();
        if idx.len() != x.rows() || idx.iter().any(|&j| j >= c) {
            return Err(NumericsError::Shape(format!("pick indices do not fit {:?}", x.shape())));
        }
        let data = idx.iter().enumerate().map(|(r, &j)| x.data()[r * c + j]).collect();
        self.tape.push_checked(vec![idx.len()], data, Op::Pick { x: self.id, idx: idx.to_vec() }, self.rg())
    }

    /// Records a scalar function of `self` whose value and gradient were
    /// computed outside the tape (e.g. a dynamic-programming loss).
    pub fn scalar_fn(self, value: f64, local_grad: Tensor) -> Result<Var<'t>, NumericsError> {
        if local_grad.shape() != self.value().shape() {
            return Err(NumericsError::Shape("scalar_fn gradient shape mismatch".into()));
        }
        let op = Op::ScalarFn { x: self.id, local_grad };
        self.tape.push_checked(vec![1], vec![value], op, self.rg())
    }

    pub fn item(&self) -> Result<f64, NumericsError> {
        self.value().item()
    }
}
