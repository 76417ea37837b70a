//! Separable bicubic resampling (Keys kernel, `a = −0.5`).
//!
//! Output pixel `i` samples input coordinate `(i + 0.5) / scale − 0.5`. When
//! shrinking, the kernel is stretched by `1 / scale` to low-pass the input
//! first. Taps outside the image replicate the nearest edge pixel.

use super::image::Image;
use crate::error::{Error, Result};
use crate::scalar::Real;

const A: f64 = -0.5;

pub fn keys_cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output position: source indices (edge-clamped) and normalised weights.
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
    per_out: usize,
    /// Index of the tap nearest the sample centre, used as the reference value.
    nearest: Vec<usize>,
}

fn taps(in_len: usize, out_len: usize) -> Taps {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let width = 4.0 / stretch;
    let per_out = width.ceil() as usize + 2;
    let mut index = Vec::with_capacity(out_len * per_out);
    let mut weight = Vec::with_capacity(out_len * per_out);
    let mut nearest = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let u = (i as f64 + 0.5) / scale - 0.5;
        let left = (u - width / 2.0).floor() as isize;
        let start = weight.len();
        for j in 0..per_out as isize {
            let src = left + j;
            weight.push(stretch * keys_cubic(stretch * (u - src as f64)));
            index.push(src.clamp(0, in_len as isize - 1) as usize);
        }
        let total: f64 = weight[start..].iter().sum();
        weight[start..].iter_mut().for_each(|w| *w /= total);
        nearest.push(u.round().clamp(0.0, in_len as f64 - 1.0) as usize);
    }
    Taps {
        index,
        weight,
        per_out,
        nearest,
    }
}

/// Resamples `src` (a `len`-strided line) into `dst` using `taps`.
///
/// Computed as `ref + Σ wⱼ (xⱼ − ref)` with normalised weights, which is
/// exact for constant lines.
fn resample_line(src: &[f64], taps: &Taps, dst: &mut [f64]) {
    for (i, out) in dst.iter_mut().enumerate() {
        let r = src[taps.nearest[i]];
        let base = i * taps.per_out;
        let mut acc = 0.0;
        for t in base..base + taps.per_out {
            acc += taps.weight[t] * (src[taps.index[t]] - r);
        }
        *out = r + acc;
    }
}

/// Bicubic resize to `out_h × out_w`.
pub fn resize_bicubic<T: Real>(img: &Image<T>, out_h: usize, out_w: usize) -> Result<Image<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Data(format!("cannot resize to {out_h}x{out_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let src: Vec<f64> = img.pixels().iter().map(|v| v.as_f64()).collect();

    let row_taps = taps(w, out_w);
    let mut horiz = vec![0.0; h * out_w];
    for y in 0..h {
        resample_line(&src[y * w..(y + 1) * w], &row_taps, &mut horiz[y * out_w..(y + 1) * out_w]);
    }

    let col_taps = taps(h, out_h);
    let mut out = vec![0.0; out_h * out_w];
    let mut column = vec![0.0; h];
    let mut resampled = vec![0.0; out_h];
    for x in 0..out_w {
        for y in 0..h {
            column[y] = horiz[y * out_w + x];
        }
        resample_line(&column, &col_taps, &mut resampled);
        for y in 0..out_h {
            out[y * out_w + x] = resampled[y];
        }
    }
    Image::new(out_h, out_w, out.into_iter().map(T::from_f64_lossy).collect())
}

/// Low-resolution simulation: bicubic downsample by `scale` (to
/// `⌈h / scale⌉ × ⌈w / scale⌉`), bicubic upsample back, clip to `[0, 1]`.
pub fn degrade_sr<T: Real>(patch: &Image<T>, scale: usize) -> Result<Image<T>> {
    if scale < 2 {
        return Err(Error::Data(format!("SR scale must be >= 2, got {scale}")));
    }
    let (h, w) = (patch.height(), patch.width());
    if h < 4 * scale || w < 4 * scale {
        return Err(Error::Data(format!(
            "{h}x{w} patch is too small for scale {scale} (needs >= {} px per side)",
            4 * scale
        )));
    }
    let low = resize_bicubic(patch, h.div_ceil(scale), w.div_ceil(scale))?;
    Ok(resize_bicubic(&low, h, w)?.clipped())
}
