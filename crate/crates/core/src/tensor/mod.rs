//! Dense 4-D `f64` tensors and the reverse-mode tape built on top of them.
//!
//! [`Tensor`] is a plain value (shape plus row-major data). Differentiation
//! happens on a [`Tape`]: every operation records its inputs and whatever it
//! needs for the backward pass, and [`Tape::backward`] walks the records in
//! reverse, accumulating gradients additively.

mod conv;
mod gemm;
mod interp;
mod loss;
mod norm;
mod pool;
mod tape;

use std::fmt;

use crate::error::{Error, Result};

pub use conv::ConvGeom;
pub use interp::{channel_interp, resize_bilinear};
pub use loss::sigmoid;
pub use norm::{BN_EPS, BN_MOMENTUM, LN_EPS};
pub use tape::{Gradients, Mode, Tape, Var};

pub(crate) use gemm::gemm;

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }
    #[inline]
    pub fn hw(&self) -> usize {
        self.0[2] * self.0[3]
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
    pub fn spatial(&self) -> (usize, usize) {
        (self.0[2], self.0[3])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape(d)
    }
}

/// Dense row-major 4-D array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.0.contains(&0) {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {shape:?}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape:?} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        assert!(!shape.0.contains(&0), "zero-sized dimension in {shape:?}");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(v: f64) -> Self {
        Self::full([1, 1, 1, 1], v)
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n() {
            for c in 0..shape.c() {
                for y in 0..shape.h() {
                    for x in 0..shape.w() {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c() + c) * s.h() + y) * s.w() + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    /// The scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Copies channels `start..start + len` of every batch item.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape;
        if len == 0 || start + len > s.c() {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} out of range for {s:?}",
                start + len
            )));
        }
        let hw = s.hw();
        let mut data = Vec::with_capacity(s.n() * len * hw);
        for n in 0..s.n() {
            let base = (n * s.c() + start) * hw;
            data.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Ok(Tensor {
            shape: Shape::new(s.n(), len, s.h(), s.w()),
            data,
        })
    }

    /// Batch item `n` as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let len = s.c() * s.hw();
        Tensor {
            shape: Shape::new(1, s.c(), s.h(), s.w()),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped `(1, C, H, W)` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c() != s.c() || t.shape.spatial() != s.spatial() {
                return Err(Error::Shape(format!("cannot stack {:?} with {s:?}", t.shape)));
            }
            n += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n, s.c(), s.h(), s.w()], data)
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.numel() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.numel())
        }
    }
}
