//! Dense row-major tensors and the forward kernels the network is built from.
//!
//! Every kernel here is a plain function over [`Tensor`] values. The [`Tape`]
//! records the same kernels together with their backward rules, so the
//! forward values produced on a tape are bitwise identical to calling the
//! kernels directly.

mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{AenError, Result};

pub use tape::{Gradients, Tape, Var};

/// Floating point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense tensor with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(AenError::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AenError::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("extents are positive")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(&mut f).collect()).expect("extents are positive")
    }

    pub fn scalar(value: T) -> Self {
        Tensor::new(vec![1], vec![value]).expect("one element")
    }

    /// Marks the tensor as trainable; tapes then track gradients flowing into it.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element at a multi-index. Panics on a bad index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Row `i` of the tensor viewed as `[len / last, last]`.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.last_extent();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn last_extent(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(AenError::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(AenError::shape("accumulate_grad", &self.shape, &[g.len()]));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x * x)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-type conversion. Gradient buffers are dropped; the trainable flag is kept.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Value-only copy: no gradient buffer, not trainable.
    pub(crate) fn detached(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }
}

/// `[..., p, q] x [q, r] -> [..., p, r]`, batched over the leading extents of `a`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() != 2 || a.shape[a.rank() - 1] != b.shape[0] {
        return Err(AenError::shape("matmul", &a.shape, &b.shape));
    }
    let q = b.shape[0];
    let r = b.shape[1];
    let rows = a.len() / q;
    let mut out = vec![T::zero(); rows * r];
    matmul_into(&a.data, &b.data, &mut out, rows, q, r);
    let mut shape = a.shape.clone();
    *shape.last_mut().expect("rank >= 2") = r;
    Tensor::new(shape, out)
}

/// `out[rows, r] += a[rows, q] * b[q, r]`; each output element sums over `k` in ascending order.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], rows: usize, q: usize, r: usize) {
    for i in 0..rows {
        let out_row = &mut out[i * r..(i + 1) * r];
        let a_row = &a[i * q..(i + 1) * q];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b[k * r..(k + 1) * r];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
}

/// Checks a softmax/attention mask against the tensor it applies to.
///
/// The mask either covers every element or only the last axis, in which case
/// it is shared by every row.
fn mask_for_row(mask: Option<&[bool]>, len: usize, width: usize, row: usize) -> Option<&[bool]> {
    mask.map(|m| {
        if m.len() == len {
            &m[row * width..(row + 1) * width]
        } else {
            m
        }
    })
}

fn check_mask(op: &'static str, x: &[usize], len: usize, width: usize, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != len && m.len() != width {
            return Err(AenError::shape(op, x, &[m.len()]));
        }
    }
    Ok(())
}

/// Row-wise softmax over the last axis with optional masking.
///
/// Masked positions take a `-inf` score so their weight is exactly zero; the
/// maximum used for stabilization is taken over unmasked entries only.
pub fn softmax<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let width = x.last_extent();
    check_mask("softmax", &x.shape, x.len(), width, mask)?;
    let mut out = vec![T::zero(); x.len()];
    for (r, (row, out_row)) in x.data.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let keep = mask_for_row(mask, x.len(), width, r);
        let score = |i: usize| match keep {
            Some(m) if !m[i] => T::neg_infinity(),
            _ => row[i],
        };
        let max = (0..width).map(score).fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(AenError::Degenerate("softmax"));
        }
        let mut total = T::zero();
        for (i, o) in out_row.iter_mut().enumerate() {
            *o = (score(i) - max).exp();
            total = total + *o;
        }
        for o in out_row.iter_mut() {
            *o = *o / total;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Exponential linear unit with alpha = 1.
    Elu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x >= T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the output value `y = f(x)`.
    pub(crate) fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Elu => {
                if y >= T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
        }
    }
}

pub fn elementwise<T: Scalar>(x: &Tensor<T>, f: Activation) -> Tensor<T> {
    Tensor::new(x.shape.clone(), x.data.iter().map(|&v| f.apply(v)).collect())
        .expect("same shape")
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

/// Lays `parts` out contiguously along `axis`.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| AenError::contract("concat of zero tensors"))?;
    if axis >= first.rank() {
        return Err(AenError::contract(format!(
            "concat axis {axis} out of range for rank {}",
            first.rank()
        )));
    }
    for p in &parts[1..] {
        let compatible = p.rank() == first.rank()
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(AenError::shape("concat", &first.shape, &p.shape));
        }
    }
    let (outer, inner) = axis_split(&first.shape, axis);
    let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape.clone();
    shape[axis] = total_axis;
    Tensor::new(shape, data)
}

/// Sub-tensor `[start, start + len)` along `axis`.
pub fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() || len == 0 || start + len > x.shape[axis] {
        return Err(AenError::contract(format!(
            "narrow [{start}, {}) on axis {axis} of {:?}",
            start + len,
            x.shape
        )));
    }
    let (outer, inner) = axis_split(&x.shape, axis);
    let extent = x.shape[axis];
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * extent * inner;
        data.extend_from_slice(&x.data[base + start * inner..base + (start + len) * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Tensor::new(shape, data)
}

/// Mean of the rows of `x: [n, d]` whose mask entry is true.
pub fn masked_mean<T: Scalar>(x: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
    if x.rank() != 2 || mask.len() != x.shape[0] {
        return Err(AenError::shape("masked_mean", &x.shape, &[mask.len()]));
    }
    let d = x.shape[1];
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(AenError::Degenerate("masked_mean"));
    }
    let mut out = vec![T::zero(); d];
    for (row, _) in x.data.chunks(d).zip(mask).filter(|(_, &m)| m) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
    }
    let n = T::of(count as f64);
    out.iter_mut().for_each(|o| *o = *o / n);
    Tensor::new(vec![d], out)
}
