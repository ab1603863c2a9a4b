use std::fmt;
use std::sync::Arc;

use crate::Float;

/// NCHW shape. Lower-rank quantities use trailing ones: a per-channel
/// vector is `[n, c, 1, 1]`, a scalar `[1, 1, 1, 1]`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { n: 1, c: 1, h: 1, w: 1 };

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: &[usize]) -> Option<Self> {
        match *d {
            [n, c, h, w] => Some(Shape::new(n, c, h, w)),
            [c, h, w] => Some(Shape::new(1, c, h, w)),
            [h, w] => Some(Shape::new(1, 1, h, w)),
            [w] => Some(Shape::new(1, 1, 1, w)),
            [] => Some(Shape::SCALAR),
            _ => None,
        }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense NCHW tensor with shared, copy-on-write storage.
///
/// A *meta* tensor carries only a shape. Operations on meta inputs produce
/// meta outputs, which lets a whole network be traced for shapes and FLOPs
/// without touching any data.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
    meta: bool,
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "tensor data length does not match shape {shape}"
        );
        Tensor { shape, data: Arc::new(data), meta: false }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Self::from_vec(shape, vec![v; shape.numel()])
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(Shape::SCALAR, vec![v])
    }

    pub fn meta(shape: Shape) -> Self {
        Tensor { shape, data: Arc::new(Vec::new()), meta: true }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Self::from_vec(shape, (0..shape.numel()).map(&mut f).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn is_meta(&self) -> bool {
        self.meta
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        assert!(!self.meta, "data access on a meta tensor of shape {}", self.shape);
        &self.data
    }

    /// Mutable access; clones the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        assert!(!self.meta, "data access on a meta tensor of shape {}", self.shape);
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        assert!(!self.meta, "data access on a meta tensor");
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn reshape(&self, shape: Shape) -> Self {
        assert_eq!(shape.numel(), self.shape.numel(), "reshape must preserve element count");
        Tensor { shape, data: Arc::clone(&self.data), meta: self.meta }
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data()[((n * s.c + c) * s.h + h) * s.w + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        if self.meta {
            return Self::meta(self.shape);
        }
        Self::from_vec(self.shape, self.data().iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        if self.meta || other.meta {
            return Self::meta(self.shape);
        }
        Self::from_vec(
            self.shape,
            self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        if self.meta {
            return;
        }
        for (a, &b) in self.data_mut().iter_mut().zip(other.data()) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).unwrap()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data()
            .iter()
            .zip(other.data())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// One batch item as an owned `[1, c, h, w]` tensor.
    pub fn item(&self, n: usize) -> Self {
        let s = self.shape;
        assert!(n < s.n, "batch index out of range");
        let one = Shape { n: 1, ..s };
        if self.meta {
            return Self::meta(one);
        }
        Self::from_vec(one, self.data()[n * s.item()..(n + 1) * s.item()].to_vec())
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Self {
        assert!(!items.is_empty(), "stack of zero tensors");
        let s0 = items[0].shape;
        let mut data = Vec::with_capacity(s0.item() * items.len());
        let mut n = 0;
        for t in items {
            assert_eq!(
                (t.shape.c, t.shape.h, t.shape.w),
                (s0.c, s0.h, s0.w),
                "stack item shape mismatch"
            );
            data.extend_from_slice(t.data());
            n += t.shape.n;
        }
        Self::from_vec(Shape { n, ..s0 }, data)
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        if self.meta {
            return Tensor::meta(self.shape);
        }
        Tensor::from_vec(self.shape, self.data().iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.meta {
            return write!(f, "Tensor<{}>(meta {})", T::DTYPE, self.shape);
        }
        let head: Vec<_> = self.data.iter().take(6).collect();
        write!(f, "Tensor<{}>({}, {:?}{})", T::DTYPE, self.shape, head, if self.numel() > 6 { "…" } else { "" })
    }
}

impl<T: Float> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.meta == other.meta && self.data == other.data
    }
}
