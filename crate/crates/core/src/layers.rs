//! Differentiable layer primitives: convolution, transposed convolution,
//! rectification and skip addition, each with an explicit backward pass.
//!
//! Convolution is cross-correlation with zero padding. The transposed
//! convolution is its exact adjoint: with a deconv weight of layout
//! `(in_ch, out_ch, k, k)` and a conv weight of layout `(out_ch, in_ch, k, k)`
//! the same buffer serves both, so `<conv(x), y> == <x, deconv(y)>`.
//!
//! All six passes reduce to three kernels:
//!
//! * `correlate` gathers a `k × k` window per output pixel (conv forward,
//!   deconv input-gradient),
//! * `scatter` spreads each input pixel over a `k × k` window (deconv
//!   forward, conv input-gradient),
//! * `weight_grad` correlates a small map against a large one.
//!
//! Each kernel lowers to a matrix product over unfolded (`im2col`) patches.
//! Work is split across threads only by batch item, and the product itself
//! runs on one thread, so results are bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape4, Tensor4};

/// Geometry of a convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// 3×3 kernel, stride 1, padding 1: preserves spatial size.
    pub const fn new(in_ch: usize, out_ch: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub const fn with_geometry(mut self, kernel: usize, stride: usize, padding: usize) -> Self {
        self.kernel = kernel;
        self.stride = stride;
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::Config(format!("channel counts must be >= 1: {self:?}")));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!("kernel and stride must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Spatial output length of a convolution over `len` input pixels.
    pub fn conv_out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Spatial output length of a transposed convolution over `len` pixels.
    pub fn deconv_out_len(&self, len: usize) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let full = (len - 1) * self.stride + self.kernel;
        (full > 2 * self.padding).then(|| full - 2 * self.padding)
    }

    fn kernel_area(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Gradients of one layer with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub grad_input: Tensor4<T>,
    pub grad_weight: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

/// Which side of the conv/deconv adjoint pair a layer is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
}

impl LayerKind {
    /// Expected weight shape for `spec`.
    pub fn weight_shape(self, spec: &ConvSpec) -> Shape4 {
        let k = spec.kernel;
        match self {
            LayerKind::Conv => Shape4::new(spec.out_ch, spec.in_ch, k, k),
            LayerKind::Deconv => Shape4::new(spec.in_ch, spec.out_ch, k, k),
        }
    }

    pub fn out_len(self, spec: &ConvSpec, len: usize) -> Option<usize> {
        match self {
            LayerKind::Conv => spec.conv_out_len(len),
            LayerKind::Deconv => spec.deconv_out_len(len),
        }
    }

    pub fn forward<T: Real>(
        self,
        x: &Tensor4<T>,
        weight: &Tensor4<T>,
        bias: &[T],
        spec: &ConvSpec,
    ) -> Result<Tensor4<T>> {
        match self {
            LayerKind::Conv => conv2d_forward(x, weight, bias, spec),
            LayerKind::Deconv => deconv2d_forward(x, weight, bias, spec),
        }
    }

    pub fn backward<T: Real>(
        self,
        x: &Tensor4<T>,
        weight: &Tensor4<T>,
        spec: &ConvSpec,
        grad_out: &Tensor4<T>,
    ) -> Result<LayerGrads<T>> {
        match self {
            LayerKind::Conv => conv2d_backward(x, weight, spec, grad_out),
            LayerKind::Deconv => deconv2d_backward(x, weight, spec, grad_out),
        }
    }
}

fn check_inputs<T: Real>(
    kind: LayerKind,
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    spec.validate()?;
    let xs = x.shape();
    if xs.c != spec.in_ch {
        return Err(Error::shape(format!(
            "{kind:?} input has {} channels, spec expects {}",
            xs.c, spec.in_ch
        )));
    }
    let ws = kind.weight_shape(spec);
    if weight.shape() != ws {
        return Err(Error::shape(format!(
            "{kind:?} weight shape {} should be {ws}",
            weight.shape()
        )));
    }
    match (kind.out_len(spec, xs.h), kind.out_len(spec, xs.w)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(Error::Geometry(format!(
            "{kind:?} with kernel {}, stride {}, padding {} has no output for a {}x{} input",
            spec.kernel, spec.stride, spec.padding, xs.h, xs.w
        ))),
    }
}

fn check_bias<T>(bias: &[T], out_ch: usize) -> Result<()> {
    if bias.len() != out_ch {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {out_ch}",
            bias.len()
        )));
    }
    Ok(())
}

fn check_grad_out<T: Real>(grad_out: &Tensor4<T>, expected: Shape4) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "grad_out shape {} does not match forward output {expected}",
            grad_out.shape()
        )));
    }
    Ok(())
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let (oh, ow) = check_inputs(LayerKind::Conv, x, weight, spec)?;
    check_bias(bias, spec.out_ch)?;
    let out_shape = Shape4::new(x.shape().n, spec.out_ch, oh, ow);
    Ok(correlate(x, weight.data(), spec, out_shape, Some(bias)))
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    spec: &ConvSpec,
    grad_out: &Tensor4<T>,
) -> Result<LayerGrads<T>> {
    let (oh, ow) = check_inputs(LayerKind::Conv, x, weight, spec)?;
    check_grad_out(grad_out, Shape4::new(x.shape().n, spec.out_ch, oh, ow))?;
    let xs = x.shape();
    let grad_input = scatter(grad_out, weight.data(), spec, Shape4::new(xs.n, xs.c, xs.h, xs.w), None);
    let grad_weight = Tensor4::from_shape_vec(
        LayerKind::Conv.weight_shape(spec),
        weight_grad(x, grad_out, spec),
    )?;
    Ok(LayerGrads {
        grad_input,
        grad_weight,
        grad_bias: channel_sums(grad_out),
    })
}

/// Transposed convolution. `weight` has layout `(in_ch, out_ch, k, k)`.
pub fn deconv2d_forward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    let (oh, ow) = check_inputs(LayerKind::Deconv, x, weight, spec)?;
    check_bias(bias, spec.out_ch)?;
    let out_shape = Shape4::new(x.shape().n, spec.out_ch, oh, ow);
    Ok(scatter(x, weight.data(), spec, out_shape, Some(bias)))
}

pub fn deconv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    spec: &ConvSpec,
    grad_out: &Tensor4<T>,
) -> Result<LayerGrads<T>> {
    let (oh, ow) = check_inputs(LayerKind::Deconv, x, weight, spec)?;
    check_grad_out(grad_out, Shape4::new(x.shape().n, spec.out_ch, oh, ow))?;
    // The deconv input-gradient is a convolution with the same buffer.
    let grad_input = correlate(grad_out, weight.data(), spec, x.shape(), None);
    let grad_weight = Tensor4::from_shape_vec(
        LayerKind::Deconv.weight_shape(spec),
        weight_grad(grad_out, x, spec),
    )?;
    Ok(LayerGrads {
        grad_input,
        grad_weight,
        grad_bias: channel_sums(grad_out),
    })
}

pub fn relu_forward<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `x > 0`; the gradient at exactly zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.check_same_shape(grad_out, "relu_backward")?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_shape_vec(x.shape(), data)
}

pub fn skip_add_forward<T: Real>(conv_feat: &Tensor4<T>, deconv_feat: &Tensor4<T>) -> Result<Tensor4<T>> {
    conv_feat.add(deconv_feat)
}

pub fn skip_add_backward<T: Real>(grad_out: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Range of output positions `o` (exclusive end) whose source index
/// `o * stride + tap - pad` falls inside `0..src_len`.
#[inline]
fn valid_range(out_len: usize, src_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if src_len + pad > tap {
        ((src_len - 1 + pad - tap) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Checked wrapper over [`Real::gemm`] for dense operands.
///
/// `a` is `m × k` and `b` is `k × n`; each is read transposed from its
/// buffer when the flag is set. `c` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach,
    // and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Unfolds `big` (`ch` planes of `bh × bw`) into a `(ch·k·k) × (sh·sw)`
/// matrix: row `(c, kh, kw)`, column `(y, x)` holds
/// `big[c, y·s + kh − p, x·s + kw − p]`, or zero outside the image.
fn im2col<T: Real>(big: &[T], ch: usize, bh: usize, bw: usize, spec: &ConvSpec, sh: usize, sw: usize) -> Vec<T> {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let cols = sh * sw;
    let mut out = vec![T::zero(); ch * k * k * cols];
    for (r, row) in out.chunks_exact_mut(cols).enumerate() {
        let (c, kh, kw) = (r / (k * k), r / k % k, r % k);
        let plane = &big[c * bh * bw..(c + 1) * bh * bw];
        let (y0, y1) = valid_range(sh, bh, kh, s, p);
        let (x0, x1) = valid_range(sw, bw, kw, s, p);
        for y in y0..y1 {
            let src = &plane[(y * s + kh - p) * bw..];
            let dst = &mut row[y * sw + x0..y * sw + x1];
            if s == 1 {
                let ix0 = x0 + kw - p;
                dst.copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = src[(x0 + j) * s + kw - p];
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: adds every column entry back onto its pixel.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], big: &mut [T], ch: usize, bh: usize, bw: usize, spec: &ConvSpec, sh: usize, sw: usize) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let n = sh * sw;
    for (r, row) in cols.chunks_exact(n).enumerate().take(ch * k * k) {
        let (c, kh, kw) = (r / (k * k), r / k % k, r % k);
        let plane = &mut big[c * bh * bw..(c + 1) * bh * bw];
        let (y0, y1) = valid_range(sh, bh, kh, s, p);
        let (x0, x1) = valid_range(sw, bw, kw, s, p);
        for y in y0..y1 {
            let dst = &mut plane[(y * s + kh - p) * bw..];
            let src = &row[y * sw + x0..y * sw + x1];
            if s == 1 {
                let ix0 = x0 + kw - p;
                for (d, &v) in dst[ix0..ix0 + (x1 - x0)].iter_mut().zip(src) {
                    *d += v;
                }
            } else {
                for (j, &v) in src.iter().enumerate() {
                    dst[(x0 + j) * s + kw - p] += v;
                }
            }
        }
    }
}

fn fill_bias<T: Real>(item: &mut [T], bias: Option<&[T]>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &v) in item.chunks_exact_mut(plane).zip(b) {
            chunk.fill(v);
        }
    }
}

/// `out[n, o, y, x] = bias[o] + Σ_{c, kh, kw} w[o, c, kh, kw] · src[n, c, y·s + kh − p, x·s + kw − p]`
///
/// `w` is indexed `[o][c][kh][kw]` with `o` over `out_shape.c` and `c` over
/// the source channels.
fn correlate<T: Real>(
    src: &Tensor4<T>,
    w: &[T],
    spec: &ConvSpec,
    out_shape: Shape4,
    bias: Option<&[T]>,
) -> Tensor4<T> {
    let ss = src.shape();
    let kk = ss.c * spec.kernel_area();
    let plane = out_shape.h * out_shape.w;
    let mut out = Tensor4::zeros_shape(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.c * plane)
        .zip(src.data().par_chunks(ss.c * ss.h * ss.w))
        .for_each(|(item, x)| {
            let cols = im2col(x, ss.c, ss.h, ss.w, spec, out_shape.h, out_shape.w);
            fill_bias(item, bias, plane);
            gemm(out_shape.c, kk, plane, w, false, &cols, false, T::one(), item);
        });
    out
}

/// Adjoint of [`correlate`]:
/// `out[n, c, y·s + kh − p, x·s + kw − p] += w[o, c, kh, kw] · src[n, o, y, x]`.
///
/// `w` is indexed `[o][c][kh][kw]` with `o` over the source channels and `c`
/// over `out_shape.c`.
fn scatter<T: Real>(
    src: &Tensor4<T>,
    w: &[T],
    spec: &ConvSpec,
    out_shape: Shape4,
    bias: Option<&[T]>,
) -> Tensor4<T> {
    let ss = src.shape();
    let kk = out_shape.c * spec.kernel_area();
    let small = ss.h * ss.w;
    let plane = out_shape.h * out_shape.w;
    let mut out = Tensor4::zeros_shape(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.c * plane)
        .zip(src.data().par_chunks(ss.c * small))
        .for_each(|(item, x)| {
            let mut cols = vec![T::zero(); kk * small];
            gemm(kk, ss.c, small, w, true, x, false, T::zero(), &mut cols);
            fill_bias(item, bias, plane);
            col2im(&cols, item, out_shape.c, out_shape.h, out_shape.w, spec, ss.h, ss.w);
        });
    out
}

/// `dw[o, c, kh, kw] = Σ_{n, y, x} small[n, o, y, x] · big[n, c, y·s + kh − p, x·s + kw − p]`
fn weight_grad<T: Real>(big: &Tensor4<T>, small: &Tensor4<T>, spec: &ConvSpec) -> Vec<T> {
    let (bs, ss) = (big.shape(), small.shape());
    let kk = bs.c * spec.kernel_area();
    let cols = ss.h * ss.w;
    // Unfold each item, then lay the items side by side so one product
    // covers the whole batch: `dw = G · Colsᵀ` with `G` of shape
    // `o × (n·y·x)`.
    let unfolded: Vec<Vec<T>> = big
        .data()
        .par_chunks(bs.c * bs.h * bs.w)
        .map(|x| im2col(x, bs.c, bs.h, bs.w, spec, ss.h, ss.w))
        .collect();
    let total = ss.n * cols;
    let mut all_cols = vec![T::zero(); kk * total];
    let mut g = vec![T::zero(); ss.c * total];
    for (n, u) in unfolded.iter().enumerate() {
        for r in 0..kk {
            all_cols[r * total + n * cols..r * total + (n + 1) * cols].copy_from_slice(&u[r * cols..(r + 1) * cols]);
        }
        for o in 0..ss.c {
            g[o * total + n * cols..o * total + (n + 1) * cols].copy_from_slice(small.plane(n, o));
        }
    }
    let mut dw = vec![T::zero(); ss.c * kk];
    gemm(ss.c, total, kk, &g, false, &all_cols, true, T::zero(), &mut dw);
    dw
}

fn channel_sums<T: Real>(t: &Tensor4<T>) -> Vec<T> {
    let s = t.shape();
    (0..s.c)
        .map(|c| {
            (0..s.n).fold(T::zero(), |acc, n| {
                acc + t.plane(n, c).iter().fold(T::zero(), |a, &v| a + v)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let data = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_shape_vec(shape, data).unwrap()
    }

    /// Direct seven-loop convolution, independent of the row-sliced kernels.
    fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], spec: &ConvSpec) -> Tensor4<f64> {
        let xs = x.shape();
        let oh = spec.conv_out_len(xs.h).unwrap();
        let ow = spec.conv_out_len(xs.w).unwrap();
        let mut out = Tensor4::zeros(xs.n, spec.out_ch, oh, ow).unwrap();
        for n in 0..xs.n {
            for o in 0..spec.out_ch {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..spec.in_ch {
                            for kh in 0..spec.kernel {
                                for kw in 0..spec.kernel {
                                    let iy = (y * spec.stride + kh) as isize - spec.padding as isize;
                                    let ix = (xx * spec.stride + kw) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += w.get(o, c, kh, kw) * x.get(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(n, o, y, xx, acc);
                    }
                }
            }
        }
        out
    }

    /// Direct scatter form of the transposed convolution.
    fn naive_deconv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], spec: &ConvSpec) -> Tensor4<f64> {
        let xs = x.shape();
        let oh = spec.deconv_out_len(xs.h).unwrap();
        let ow = spec.deconv_out_len(xs.w).unwrap();
        let mut out = Tensor4::zeros(xs.n, spec.out_ch, oh, ow).unwrap();
        for n in 0..xs.n {
            for o in 0..spec.out_ch {
                for y in 0..oh {
                    for xx in 0..ow {
                        out.set(n, o, y, xx, b[o]);
                    }
                }
            }
            for i in 0..spec.in_ch {
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        for o in 0..spec.out_ch {
                            for kh in 0..spec.kernel {
                                for kw in 0..spec.kernel {
                                    let oy = (y * spec.stride + kh) as isize - spec.padding as isize;
                                    let ox = (xx * spec.stride + kw) as isize - spec.padding as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    let (oy, ox) = (oy as usize, ox as usize);
                                    let v = out.get(n, o, oy, ox) + w.get(i, o, kh, kw) * x.get(n, i, y, xx);
                                    out.set(n, o, oy, ox, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &Tensor4<f64>, b: &Tensor4<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    fn delta_kernel(ch: usize) -> Tensor4<f64> {
        let mut w = Tensor4::zeros(ch, ch, 3, 3).unwrap();
        for c in 0..ch {
            w.set(c, c, 1, 1, 1.0);
        }
        w
    }

    #[test]
    fn all_ones_kernel_on_3x3() {
        let x = Tensor4::from_vec(1, 1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor4::filled(1, 1, 3, 3, 1.0).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], &ConvSpec::new(1, 1)).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 45.0);
        assert_eq!(y.get(0, 0, 0, 0), 12.0);
        assert_eq!(y, naive_conv(&x, &w, &[0.0], &ConvSpec::new(1, 1)));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape4::new(2, 3, 5, 7), &mut rng);
        let w = delta_kernel(3);
        let spec = ConvSpec::new(3, 3);
        let b = [0.0; 3];
        assert_eq!(conv2d_forward(&x, &w, &b, &spec).unwrap(), x);
        assert_eq!(deconv2d_forward(&x, &w, &b, &spec).unwrap(), x);

        let g = conv2d_backward(&x, &w, &spec, &x).unwrap();
        assert_eq!(g.grad_input, x);
        let g = deconv2d_backward(&x, &w, &spec, &x).unwrap();
        assert_eq!(g.grad_input, x);
    }

    #[test]
    fn stride3_chain_reaches_one_pixel() {
        let spec = ConvSpec::new(1, 1).with_geometry(3, 3, 0);
        let mut len = 243;
        let mut sizes = vec![];
        for _ in 0..5 {
            len = spec.conv_out_len(len).unwrap();
            sizes.push(len);
        }
        assert_eq!(sizes, [81, 27, 9, 3, 1]);

        let x = Tensor4::<f32>::filled(1, 1, 243, 243, 1.0).unwrap();
        let w = Tensor4::filled(1, 1, 3, 3, 1.0 / 9.0).unwrap();
        let mut y = x;
        for _ in 0..5 {
            y = conv2d_forward(&y, &w, &[0.0], &spec).unwrap();
        }
        assert_eq!((y.shape().h, y.shape().w), (1, 1));
    }

    #[test]
    fn deconv_one_pixel_scatter() {
        let x = Tensor4::from_vec(1, 1, 1, 1, vec![2.5f64]).unwrap();
        let w = Tensor4::filled(1, 1, 3, 3, 1.0).unwrap();
        let spec = ConvSpec::new(1, 1).with_geometry(3, 3, 0);
        let y = deconv2d_forward(&x, &w, &[0.0], &spec).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn kernels_match_naive_loops_over_geometry_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=5 {
            for s in 1..=3 {
                for p in 0..=2 {
                    let spec = ConvSpec::new(2, 3).with_geometry(k, s, p);
                    let (h, w) = (7, 9);
                    let x = random(Shape4::new(2, 2, h, w), &mut rng);
                    let wt = random(Shape4::new(3, 2, k, k), &mut rng);
                    let b = [0.3, -0.2, 0.1];
                    let y = conv2d_forward(&x, &wt, &b, &spec).unwrap();
                    assert_eq!(y.shape().h, spec.conv_out_len(h).unwrap());
                    assert_close(&y, &naive_conv(&x, &wt, &b, &spec), 1e-12);

                    let dspec = ConvSpec::new(3, 2).with_geometry(k, s, p);
                    let z = random(Shape4::new(2, 3, 4, 5), &mut rng);
                    if let (Some(_), Some(_)) = (dspec.deconv_out_len(4), dspec.deconv_out_len(5)) {
                        let d = deconv2d_forward(&z, &wt, &b[..2], &dspec).unwrap();
                        assert_close(&d, &naive_deconv(&z, &wt, &b[..2], &dspec), 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_is_linear_in_input_and_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvSpec::new(2, 2);
        let x1 = random(Shape4::new(1, 2, 6, 6), &mut rng);
        let x2 = random(Shape4::new(1, 2, 6, 6), &mut rng);
        let w1 = random(Shape4::new(2, 2, 3, 3), &mut rng);
        let w2 = random(Shape4::new(2, 2, 3, 3), &mut rng);
        let b = [0.0; 2];
        let f = |x: &Tensor4<f64>, w: &Tensor4<f64>| conv2d_forward(x, w, &b, &spec).unwrap();
        assert_close(&f(&x1.add(&x2).unwrap(), &w1), &f(&x1, &w1).add(&f(&x2, &w1)).unwrap(), 1e-12);
        assert_close(&f(&x1, &w1.add(&w2).unwrap()), &f(&x1, &w1).add(&f(&x1, &w2)).unwrap(), 1e-12);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = ConvSpec::new(2, 3);
        let x = random(Shape4::new(1, 2, 5, 5), &mut rng);
        let w = random(Shape4::new(3, 2, 3, 3), &mut rng);
        let g = conv2d_backward(&x, &w, &spec, &Tensor4::zeros(1, 3, 5, 5).unwrap()).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));

        let wd = random(Shape4::new(2, 3, 3, 3), &mut rng);
        let g = deconv2d_backward(&x, &wd, &spec, &Tensor4::zeros(1, 3, 5, 5).unwrap()).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_definition_and_idempotence() {
        let x = Tensor4::from_vec(1, 1, 1, 3, vec![-1.0f32, 0.0, 2.0]).unwrap();
        let r = relu_forward(&x);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&r), r);
        let g = Tensor4::filled(1, 1, 1, 3, 5.0f32).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
        let bad = Tensor4::filled(1, 1, 1, 2, 5.0f32).unwrap();
        assert!(matches!(relu_backward(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn skip_add_rules() {
        let x = Tensor4::from_vec(1, 1, 1, 2, vec![1.0f32, -3.0]).unwrap();
        assert_eq!(skip_add_forward(&x, &Tensor4::zeros_like(&x)).unwrap(), x);
        let (a, b) = skip_add_backward(&x);
        assert_eq!((a, b), (x.clone(), x));
    }

    #[test]
    fn shape_and_geometry_errors() {
        let x = Tensor4::<f32>::zeros(1, 2, 4, 4).unwrap();
        let w = Tensor4::<f32>::zeros(3, 2, 3, 3).unwrap();
        let spec = ConvSpec::new(2, 3);
        assert!(matches!(conv2d_forward(&x, &w, &[0.0; 2], &spec), Err(Error::Shape(_))));
        assert!(matches!(
            conv2d_forward(&x, &w, &[0.0; 3], &ConvSpec::new(1, 3)),
            Err(Error::Shape(_))
        ));
        let big = ConvSpec::new(2, 3).with_geometry(7, 1, 0);
        let w7 = Tensor4::<f32>::zeros(3, 2, 7, 7).unwrap();
        assert!(matches!(conv2d_forward(&x, &w7, &[0.0; 3], &big), Err(Error::Geometry(_))));
        let g = Tensor4::<f32>::zeros(1, 3, 3, 4).unwrap();
        assert!(matches!(conv2d_backward(&x, &w, &spec, &g), Err(Error::Shape(_))));
    }
}
