//! Deterministic synthetic grayscale scenes.
//!
//! Piecewise-smooth images (a shaded background with overlapping rectangles,
//! discs and striped patches) for tests, demos and toy-scale experiments
//! where no natural-image dataset is at hand.

use rand::Rng;

use super::image::Image;
use crate::rng::seeded;
use crate::scalar::Real;

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64, v: f64 },
    Disc { cy: f64, cx: f64, r: f64, v: f64 },
    Stripes { y0: f64, x0: f64, y1: f64, x1: f64, period: f64, angle: f64, v: f64 },
}

pub fn scene<T: Real>(h: usize, w: usize, seed: u64) -> Image<T> {
    let mut rng = seeded(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base = rng.gen_range(0.25..0.6);
    let gy = rng.gen_range(-0.2..0.2);
    let gx = rng.gen_range(-0.2..0.2);

    let count = rng.gen_range(6..12);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let v = rng.gen_range(0.05..0.95);
            let cy = rng.gen_range(0.0..hf);
            let cx = rng.gen_range(0.0..wf);
            let size = rng.gen_range(0.1..0.45) * hf.min(wf);
            match rng.gen_range(0..3) {
                0 => Shape::Rect {
                    y0: cy - size / 2.0,
                    x0: cx - size / 2.0,
                    y1: cy + size / 2.0,
                    x1: cx + rng.gen_range(0.3..1.5) * size,
                    v,
                },
                1 => Shape::Disc { cy, cx, r: size / 2.0, v },
                _ => Shape::Stripes {
                    y0: cy - size / 2.0,
                    x0: cx - size / 2.0,
                    y1: cy + size / 2.0,
                    x1: cx + size / 2.0,
                    period: rng.gen_range(4.0..12.0),
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                    v,
                },
            }
        })
        .collect();

    Image::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = base + gy * yf / hf + gx * xf / wf;
        for s in &shapes {
            match *s {
                Shape::Rect { y0, x0, y1, x1, v: sv } => {
                    if yf >= y0 && yf < y1 && xf >= x0 && xf < x1 {
                        v = sv;
                    }
                }
                Shape::Disc { cy, cx, r, v: sv } => {
                    let d = ((yf - cy).powi(2) + (xf - cx).powi(2)).sqrt();
                    if d < r {
                        // Radial shading keeps the interior smooth but not flat.
                        v = sv * (0.8 + 0.2 * (1.0 - d / r));
                    }
                }
                Shape::Stripes { y0, x0, y1, x1, period, angle, v: sv } => {
                    if yf >= y0 && yf < y1 && xf >= x0 && xf < x1 {
                        let t = (xf * angle.cos() + yf * angle.sin()) / period;
                        v = sv + 0.15 * (std::f64::consts::TAU * t).sin();
                    }
                }
            }
        }
        T::from_f64_lossy(v.clamp(0.02, 0.98))
    })
    .expect("non-empty scene")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = scene::<f32>(40, 50, 9);
        assert_eq!(a, scene::<f32>(40, 50, 9));
        assert_ne!(a, scene::<f32>(40, 50, 10));
        assert!(a.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let spread = a.pixels().iter().cloned().fold(f32::MIN, f32::max)
            - a.pixels().iter().cloned().fold(f32::MAX, f32::min);
        assert!(spread > 0.2);
    }
}
