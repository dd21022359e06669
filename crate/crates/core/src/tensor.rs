use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{config_err, Result};
use crate::Scalar;

/// Extents of a 4-D tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// A length-`len` vector stored as `(len, 1, 1, 1)`.
    pub const fn vector(len: usize) -> Self {
        Shape { n: len, c: 1, h: 1, w: 1 }
    }

    pub const fn scalar() -> Self {
        Shape { n: 1, c: 1, h: 1, w: 1 }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn is_empty(&self) -> bool {
        self.numel() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense row-major 4-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(config_err!("tensor of shape {shape} needs {} elements, got {}", shape.numel(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    /// Batch item `n` as a `(1, c, h, w)` tensor.
    pub fn item(&self, n: usize) -> Self {
        let len = self.shape.item();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| config_err!("cannot stack zero tensors"))?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (first.c, first.h, first.w) {
                return Err(config_err!("cannot stack {} with {}", t.shape, first));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape::new(n, first.c, first.h, first.w), data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::ZERO, |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a.to_f64() - b.to_f64()).abs_f64()).fold(0.0, f64::max)
    }

    pub(crate) fn add_assign_slice(&mut self, other: &[T]) {
        for (a, &b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

pub(crate) trait AbsF64 {
    fn abs_f64(self) -> f64;
}

impl AbsF64 for f64 {
    #[inline]
    fn abs_f64(self) -> f64 {
        libm::fabs(self)
    }
}
