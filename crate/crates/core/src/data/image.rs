use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor4;

/// Single-channel image. Loaded and clipped images hold values in `[0, 1]`;
/// noisy intermediates may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    h: usize,
    w: usize,
    pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(h: usize, w: usize, pixels: Vec<T>) -> Result<Self> {
        if h == 0 || w == 0 || pixels.len() != h * w {
            return Err(Error::shape(format!(
                "image {h}x{w} needs {} pixels, got {}",
                h * w,
                pixels.len()
            )));
        }
        Ok(Image { h, w, pixels })
    }

    pub fn filled(h: usize, w: usize, value: T) -> Result<Self> {
        Self::new(h, w, vec![value; h * w])
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let pixels = (0..h * w).map(|i| f(i / w.max(1), i % w.max(1))).collect();
        Self::new(h, w, pixels)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.pixels[y * self.w + x] = v;
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// `p_h × p_w` window with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, p_h: usize, p_w: usize) -> Result<Self> {
        if y + p_h > self.h || x + p_w > self.w {
            return Err(Error::Data(format!(
                "crop {p_h}x{p_w} at ({y}, {x}) exceeds {}x{} image",
                self.h, self.w
            )));
        }
        let mut pixels = Vec::with_capacity(p_h * p_w);
        for row in y..y + p_h {
            pixels.extend_from_slice(&self.pixels[row * self.w + x..row * self.w + x + p_w]);
        }
        Self::new(p_h, p_w, pixels)
    }

    /// Values clamped to `[0, 1]`.
    pub fn clipped(&self) -> Self {
        let (lo, hi) = (T::zero(), T::one());
        Image {
            h: self.h,
            w: self.w,
            pixels: self.pixels.iter().map(|&v| v.max(lo).min(hi)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            h: self.h,
            w: self.w,
            pixels: self.pixels.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|v| v.as_f64()).sum::<f64>() / self.pixels.len() as f64
    }

    /// `(1, 1, h, w)` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor4<T> {
        Tensor4::from_vec(1, 1, self.h, self.w, self.pixels.clone()).expect("image dims are >= 1")
    }

    /// Stacks equally sized images into an `(n, 1, h, w)` batch.
    pub fn batch(images: &[&Self]) -> Result<Tensor4<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::shape("cannot batch zero images"))?;
        let mut data = Vec::with_capacity(images.len() * first.pixels.len());
        for img in images {
            if !img.same_size(first) {
                return Err(Error::shape(format!(
                    "batch mixes {}x{} and {}x{} images",
                    first.h, first.w, img.h, img.w
                )));
            }
            data.extend_from_slice(&img.pixels);
        }
        Tensor4::from_vec(images.len(), 1, first.h, first.w, data)
    }

    /// Channel 0 of batch item `n`.
    pub fn from_tensor(t: &Tensor4<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        if n >= s.n {
            return Err(Error::shape(format!("batch index {n} out of range for {s}")));
        }
        Self::new(s.h, s.w, t.plane(n, 0).to_vec())
    }
}

/// BT.601 luma of an RGB triple in `[0, 1]`, clipped to `[0, 1]`.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}
