//! Dense NCHW tensors.
//!
//! [`Tensor4`] is the single value type used for images, feature maps,
//! kernels and gradients. Storage is a flat row-major vector in
//! `(n, c, h, w)` order. There is no broadcasting: every binary operation
//! requires identical shapes and reports a [`Error::Shape`] otherwise.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Extent of a [`Tensor4`] along its four axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Flat offset of `(n, c, h, w)`.
    #[inline]
    pub const fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape(format!("all dimensions must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("head", &&self.data[..self.data.len().min(SHOWN)])
            .finish()
    }
}

impl<T: Real> Tensor4<T> {
    /// Tensor of the given shape filled with `value`.
    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: T) -> Result<Self> {
        let shape = Shape4::new(n, c, h, w);
        shape.validate()?;
        Ok(Tensor4 {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::filled(n, c, h, w, T::zero())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Tensor4 {
            shape: other.shape,
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub(crate) fn zeros_shape(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        let shape = Shape4::new(n, c, h, w);
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_shape_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        Self::from_vec(shape.n, shape.c, shape.h, shape.w, data)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.shape.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// The `(h, w)` plane at batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape.c * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Inner product `Σ aᵢ bᵢ`, summed in index order.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    /// Stacks single-item tensors of identical `(c, h, w)` along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        for t in items {
            if t.shape.c != s.c || t.shape.h != s.h || t.shape.w != s.w {
                return Err(Error::shape(format!(
                    "stack: item shape {} differs from {}",
                    t.shape, s
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (s.c * s.plane());
        Self::from_vec(n, s.c, s.h, s.w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_fill() {
        let t = Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor4::from_vec(1, 1, 2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 0, 1, 1), 4.0);
        assert_eq!(t.get(0, 0, 0, 1), 2.0);

        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64).collect();
        let t = Tensor4::from_vec(2, 3, 4, 5, data).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        let flat = ((n * 3 + c) * 4 + h) * 5 + w;
                        assert_eq!(t.get(n, c, h, w), flat as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let err = Tensor4::from_vec(1, 1, 2, 2, vec![1.0f32, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(matches!(
            Tensor4::<f32>::zeros(0, 1, 2, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn add_definition_and_identity() {
        let a = Tensor4::from_vec(1, 1, 1, 2, vec![1.0f32, 2.0]).unwrap();
        let b = Tensor4::from_vec(1, 1, 1, 2, vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let z = Tensor4::zeros_like(&a);
        assert_eq!(a.add(&z).unwrap(), a);
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        let a = Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap();
        let b = Tensor4::<f32>::zeros(1, 1, 2, 3).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
        assert!(matches!(a.dot(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn dot_definition() {
        let a = Tensor4::from_vec(1, 1, 1, 3, vec![1.0f64, 2.0, 3.0]).unwrap();
        assert_eq!(a.dot(&a).unwrap(), 14.0);
        assert_eq!(a.dot(&Tensor4::zeros_like(&a)).unwrap(), 0.0);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|len| {
            (
                prop::collection::vec(-1e3f64..1e3, len),
                prop::collection::vec(-1e3f64..1e3, len),
            )
        })
    }

    proptest! {
        #[test]
        fn add_commutes_exactly((a, b) in pair()) {
            let n = a.len();
            let ta = Tensor4::from_vec(1, 1, 1, n, a).unwrap();
            let tb = Tensor4::from_vec(1, 1, 1, n, b).unwrap();
            prop_assert_eq!(ta.add(&tb).unwrap(), tb.add(&ta).unwrap());
        }

        #[test]
        fn dot_symmetric_and_norm_nonnegative((a, b) in pair()) {
            let n = a.len();
            let ta = Tensor4::from_vec(1, 1, 1, n, a).unwrap();
            let tb = Tensor4::from_vec(1, 1, 1, n, b).unwrap();
            prop_assert_eq!(ta.dot(&tb).unwrap(), tb.dot(&ta).unwrap());
            prop_assert!(ta.dot(&ta).unwrap() >= 0.0);
        }

        #[test]
        fn add_associative_to_rounding((a, b) in pair(), shift in -10.0f64..10.0) {
            let n = a.len();
            let c: Vec<f64> = a.iter().map(|v| v * 0.5 + shift).collect();
            let ta = Tensor4::from_vec(1, 1, 1, n, a).unwrap();
            let tb = Tensor4::from_vec(1, 1, 1, n, b).unwrap();
            let tc = Tensor4::from_vec(1, 1, 1, n, c).unwrap();
            let left = ta.add(&tb).unwrap().add(&tc).unwrap();
            let right = ta.add(&tb.add(&tc).unwrap()).unwrap();
            for i in 0..n {
                let (l, r) = (left.data()[i], right.data()[i]);
                let mag = ta.data()[i].abs() + tb.data()[i].abs() + tc.data()[i].abs();
                prop_assert!((l - r).abs() <= 2.0 * f64::EPSILON * mag);
            }
        }
    }
}
