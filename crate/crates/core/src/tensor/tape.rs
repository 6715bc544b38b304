//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so every input id is smaller than
//! the id of its consumer and a single reverse sweep visits nodes in a valid
//! topological order.

use super::{
    concat, elementwise, masked_mean, matmul, matmul_into, narrow, softmax, Activation, Scalar,
    Tensor,
};
use crate::error::{AenError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Smallest argument `ln` sees; smaller inputs are clamped and counted.
pub const LN_CLAMP: f64 = 1e-12;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    Activation(Var, Activation),
    Ln(Var),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    OuterAdd(Var, Var),
    MaskedMean(Var, Vec<bool>),
    Sum(Var),
    SumSquares(Var),
    Dot(Var, Vec<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    clamp_events: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            clamp_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `ln` inputs that fell below [`LN_CLAMP`].
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value: value.detached(),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are tracked only when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.detached(),
            op: Op::Leaf,
            tracked: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of a parameter, tracked when the tensor is trainable.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t.detached(), t.requires_grad())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(AenError::shape("add", self.shape(a), self.shape(b)));
        }
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `[d]` vector to every row of a `[..., d]` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || xv.last_extent() != bv.len() {
            return Err(AenError::shape("add_row", xv.shape(), bv.shape()));
        }
        let d = bv.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % d])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(AenError::shape("mul", self.shape(a), self.shape(b)));
        }
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a constant of the same size (used for dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(AenError::shape("mul_const", xv.shape(), &[factors.len()]));
        }
        let data = xv.data().iter().zip(&factors).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(x, factors), &[x]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * c).collect())
            .expect("same shape");
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn activation(&mut self, x: Var, f: Activation) -> Var {
        let out = elementwise(self.value(x), f);
        self.push(out, Op::Activation(x, f), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Elu)
    }

    /// Natural log with inputs clamped below at [`LN_CLAMP`].
    pub fn ln(&mut self, x: Var) -> Var {
        let floor = T::of(LN_CLAMP);
        let xv = self.value(x);
        let mut clamped = 0;
        let data = xv
            .data()
            .iter()
            .map(|&v| {
                if v < floor {
                    clamped += 1;
                    floor.ln()
                } else {
                    v.ln()
                }
            })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.clamp_events += clamped;
        self.push(out, Op::Ln(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = softmax(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = concat(&values, axis)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = narrow(self.value(x), axis, start, len)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).detached().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `out[j, i] = col[j] + row[i]` for `col: [m]`, `row: [n]` (any shapes with those lengths).
    pub fn outer_add(&mut self, col: Var, row: Var) -> Var {
        let (c, r) = (self.value(col).data(), self.value(row).data());
        let (m, n) = (c.len(), r.len());
        let mut data = Vec::with_capacity(m * n);
        for &cj in c {
            data.extend(r.iter().map(|&ri| cj + ri));
        }
        let out = Tensor::new(vec![m, n], data).expect("positive extents");
        self.push(out, Op::OuterAdd(col, row), &[col, row])
    }

    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let out = masked_mean(self.value(x), mask)?;
        Ok(self.push(out, Op::MaskedMean(x, mask.to_vec()), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum_squares());
        self.push(out, Op::SumSquares(x), &[x])
    }

    /// `Σ x ⊙ weights` with constant weights.
    pub fn dot_const(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if weights.len() != xv.len() {
            return Err(AenError::shape("dot_const", xv.shape(), &[weights.len()]));
        }
        let s = xv
            .data()
            .iter()
            .zip(&weights)
            .fold(T::zero(), |acc, (&p, &q)| acc + p * q);
        Ok(self.push(Tensor::scalar(s), Op::Dot(x, weights), &[x]))
    }

    /// Sums scalars in order.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| AenError::contract("sum of zero terms"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Propagates d(loss)/d(node) back through the tape.
    ///
    /// Gradients from multiple uses of one value accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(AenError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let q = bv.shape()[0];
                let r = bv.shape()[1];
                let rows = av.len() / q;
                self.accumulate(grads, *a, |da| {
                    for i in 0..rows {
                        let g_row = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let b_row = &bv.data()[k * r..(k + 1) * r];
                            let dot = g_row.iter().zip(b_row).fold(T::zero(), |s, (&x, &w)| s + x * w);
                            da[i * q + k] = da[i * q + k] + dot;
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    // dB = Aᵀ · dC
                    let at = transpose(av.data(), rows, q);
                    matmul_into(&at, g, db, q, rows, r);
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |d| add_into(d, g));
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |d| add_into(d, g));
                self.accumulate(grads, *bias, |d| {
                    let w = d.len();
                    for row in g.chunks(w) {
                        add_into(d, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((di, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                        *di = *di + gi * bi;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((di, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                        *di = *di + gi * ai;
                    }
                });
            }
            Op::MulConst(x, factors) => self.accumulate(grads, *x, |d| {
                for ((di, &gi), &f) in d.iter_mut().zip(g).zip(factors) {
                    *di = *di + gi * f;
                }
            }),
            Op::Scale(x, c) => self.accumulate(grads, *x, |d| {
                for (di, &gi) in d.iter_mut().zip(g) {
                    *di = *di + gi * *c;
                }
            }),
            Op::Activation(x, f) => self.accumulate(grads, *x, |d| {
                for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                    *di = *di + gi * f.derivative_from_output(yi);
                }
            }),
            Op::Ln(x) => {
                let floor = T::of(LN_CLAMP);
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    for ((di, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                        if xi >= floor {
                            *di = *di + gi / xi;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let w = node.value.last_extent();
                self.accumulate(grads, *x, |d| {
                    for ((d_row, g_row), y_row) in d.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                        let s = g_row.iter().zip(y_row).fold(T::zero(), |s, (&gi, &yi)| s + gi * yi);
                        for ((di, &gi), &yi) in d_row.iter_mut().zip(g_row).zip(y_row) {
                            *di = *di + yi * (gi - s);
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    self.accumulate(grads, p, |d| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            add_into(&mut d[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let src_shape = self.shape(*x);
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let extent = src_shape[*axis];
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        add_into(&mut d[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |d| add_into(d, g)),
            Op::OuterAdd(col, row) => {
                let n = self.value(*row).len();
                self.accumulate(grads, *col, |d| {
                    for (dj, g_row) in d.iter_mut().zip(g.chunks(n)) {
                        *dj = g_row.iter().fold(*dj, |s, &v| s + v);
                    }
                });
                self.accumulate(grads, *row, |d| {
                    for g_row in g.chunks(n) {
                        add_into(d, g_row);
                    }
                });
            }
            Op::MaskedMean(x, mask) => {
                let w = g.len();
                let count = T::of(mask.iter().filter(|&&m| m).count() as f64);
                self.accumulate(grads, *x, |d| {
                    for (d_row, _) in d.chunks_mut(w).zip(mask).filter(|(_, &m)| m) {
                        for (di, &gi) in d_row.iter_mut().zip(g) {
                            *di = *di + gi / count;
                        }
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |d| d.iter_mut().for_each(|di| *di = *di + g[0])),
            Op::SumSquares(x) => {
                let xv = self.value(*x).data();
                let two = T::of(2.0);
                self.accumulate(grads, *x, |d| {
                    for (di, &xi) in d.iter_mut().zip(xv) {
                        *di = *di + two * xi * g[0];
                    }
                });
            }
            Op::Dot(x, weights) => self.accumulate(grads, *x, |d| {
                for (di, &wi) in d.iter_mut().zip(weights) {
                    *di = *di + wi * g[0];
                }
            }),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Result of [`Tape::backward`]: one optional gradient buffer per recorded value.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient for `v` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }
}
