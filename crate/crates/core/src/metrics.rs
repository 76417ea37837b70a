//! PSNR and SSIM on `[0, 1]` grayscale images, and dataset evaluation.
//!
//! SSIM uses the common reference parameters: an 11×11 Gaussian window with
//! σ = 1.5, `K1 = 0.01`, `K2 = 0.03`, averaged over all fully covered
//! window positions. All arithmetic is in `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Corruption, CorruptionSpec, Image, SourceImage};
use crate::error::{Error, Result};
use crate::infer::{restore, restore_ensemble};
use crate::network::Network;
use crate::rng::{derive_seed, seeded};
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_sizes<T: Real>(a: &Image<T>, b: &Image<T>, what: &str) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `10 · log10(peak² / MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, peak: f64) -> Result<f64> {
    check_sizes(a, b, "psnr")?;
    let n = a.pixels().len() as f64;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" filtering of a row-major `h × w` field.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let line = &src[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = line.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| rows[(y + k) * ow + x] * g[k]).sum();
        }
    }
    out
}

/// Mean structural similarity with peak 1.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_sizes(a, b, "ssim")?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let x: Vec<f64> = a.pixels().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.pixels().iter().map(|v| v.as_f64()).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(s, t)| s * t).collect() };

    let mu_x = filter_valid(&x, h, w, &g);
    let mu_y = filter_valid(&y, h, w, &g);
    let xx = filter_valid(&prod(&x, &x), h, w, &g);
    let yy = filter_valid(&prod(&y, &y), h, w, &g);
    let xy = filter_valid(&prod(&x, &y), h, w, &g);

    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let mxy = mx * my;
        let (mxx, myy) = (mx * mx, my * my);
        let (vx, vy, cov) = (xx[i] - mxx, yy[i] - myy, xy[i] - mxy);
        total += ((2.0 * mxy + c1) * (2.0 * cov + c2)) / ((mxx + myy + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Scores for one image at one corruption level.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub level: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// PSNR of the corrupted input against the clean image.
    pub input_psnr_db: f64,
}

/// Per-level means; infinite PSNRs are left out of `psnr_db`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub level: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub input_psnr_db: f64,
    pub images: usize,
    pub infinite: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        } else {
            skipped += 1;
        }
    }
    (if n == 0 { f64::INFINITY } else { sum / n as f64 }, skipped)
}

impl MetricReport {
    /// Level labels in first-seen order.
    pub fn levels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.level) {
                out.push(r.level.clone());
            }
        }
        out
    }

    pub fn summaries(&self) -> Vec<LevelSummary> {
        self.levels()
            .into_iter()
            .map(|level| {
                let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.level == level).collect();
                let (psnr_db, infinite) = finite_mean(rows.iter().map(|r| r.psnr_db));
                if infinite > 0 {
                    log::warn!("{level}: {infinite} image(s) with infinite PSNR left out of the mean");
                }
                let (input_psnr_db, _) = finite_mean(rows.iter().map(|r| r.input_psnr_db));
                LevelSummary {
                    psnr_db,
                    ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64,
                    input_psnr_db,
                    images: rows.len(),
                    infinite,
                    level,
                }
            })
            .collect()
    }

    pub fn summary(&self, level: &str) -> Option<LevelSummary> {
        self.summaries().into_iter().find(|s| s.level == level)
    }

    /// Rows `image,level,psnr_db,ssim`, then one `mean` row per level.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,level,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.image, r.level, r.psnr_db, r.ssim);
        }
        for m in self.summaries() {
            let _ = writeln!(s, "mean,{},{:.6},{:.6}", m.level, m.psnr_db, m.ssim);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Corrupts every image at every level of `spec`, restores it and scores the
/// result against the clean image. Each (level, image) pair draws from its
/// own stream derived from `seed`.
pub fn evaluate<T: Real>(
    net: &Network<T>,
    images: &[SourceImage<T>],
    spec: &CorruptionSpec,
    seed: u64,
    ensemble: bool,
) -> Result<MetricReport> {
    if images.is_empty() {
        return Err(Error::Data("evaluation needs at least one image".into()));
    }
    spec.validate()?;
    let mut report = MetricReport::default();
    for (li, level) in spec.levels().into_iter().enumerate() {
        for (ii, src) in images.iter().enumerate() {
            let corrupted = corrupt_for_eval(&src.image, level, derive_seed(derive_seed(seed, li as u64), ii as u64))?;
            let restored = if ensemble {
                restore_ensemble(net, &corrupted)?
            } else {
                restore(net, &corrupted)?
            };
            report.rows.push(MetricRow {
                image: src.id.clone(),
                level: level.to_string(),
                psnr_db: psnr(&restored, &src.image, 1.0)?,
                ssim: ssim(&restored, &src.image)?,
                input_psnr_db: psnr(&corrupted.clipped(), &src.image, 1.0)?,
            });
        }
    }
    Ok(report)
}

fn corrupt_for_eval<T: Real>(img: &Image<T>, level: Corruption, seed: u64) -> Result<Image<T>> {
    level.apply(img, &mut seeded(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{corrupt_gaussian, synthetic};
    use crate::network::RedNetConfig;
    use crate::rng::fill_normal;

    fn constant(v: f64) -> Image<f64> {
        Image::filled(16, 16, v).unwrap()
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&constant(0.3), &constant(0.3), 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&constant(0.0), &constant(1.0), 1.0).unwrap().abs() < 1e-12);
        let d = psnr(&constant(0.5), &constant(0.6), 1.0).unwrap();
        assert!((d - 20.0).abs() < 1e-6, "{d}");
        let a = synthetic::scene::<f64>(20, 20, 1);
        let b = synthetic::scene::<f64>(20, 20, 2);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &constant(0.0), 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = synthetic::scene::<f64>(40, 33, 9);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let s = ssim(&constant(0.25), &constant(0.75)).unwrap();
        let expected = (2.0 * 0.1875 + 1e-4) / (0.625 + 1e-4);
        assert!((s - expected).abs() < 1e-6, "{s} vs {expected}");
        assert!((s - 0.6001).abs() < 1e-4);

        let mut noise = vec![0.0; a.pixels().len()];
        fill_normal(&mut seeded(2), &mut noise, 0.0, 1e-3);
        let mut b = a.clone();
        b.pixels_mut().iter_mut().zip(&noise).for_each(|(p, n)| *p += n);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0 && s > 0.99, "{s}");
        assert_eq!(s, ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let small = Image::filled(10, 40, 0.5f64).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::Shape(_))));
        assert!(ssim(&constant(0.1), &Image::filled(16, 17, 0.1).unwrap()).is_err());
    }

    #[test]
    fn psnr_falls_with_noise() {
        let img = synthetic::scene::<f64>(64, 64, 3);
        let mut last = f64::INFINITY;
        for sigma in [10.0, 30.0, 50.0, 70.0] {
            let noisy = corrupt_gaussian(&img, sigma, &mut seeded(5));
            let p = psnr(&noisy, &img, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    fn images() -> Vec<SourceImage<f32>> {
        (0..3)
            .map(|i| SourceImage::new(format!("img{i}"), synthetic::scene::<f32>(24, 30, i)))
            .collect()
    }

    #[test]
    fn identity_restorer_reports_input_psnr() {
        let cfg = RedNetConfig {
            global_input_skip: true,
            ..RedNetConfig::red10().with_width(2)
        };
        let net = Network::<f32>::zeroed(cfg).unwrap();
        let spec = CorruptionSpec::gaussian(&[30.0]);
        let report = evaluate(&net, &images(), &spec, 11, false).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert_eq!(r.psnr_db, r.input_psnr_db);
        }
        assert_eq!(report, evaluate(&net, &images(), &spec, 11, false).unwrap());
        let m = report.summary("sigma=30").unwrap();
        let mean = report.rows.iter().map(|r| r.psnr_db).sum::<f64>() / 3.0;
        assert_eq!(m.psnr_db, mean);
    }

    #[test]
    fn clean_inputs_give_infinite_psnr() {
        let cfg = RedNetConfig {
            global_input_skip: true,
            ..RedNetConfig::red10().with_width(2)
        };
        let net = Network::<f32>::zeroed(cfg).unwrap();
        let mut report = MetricReport::default();
        for src in images() {
            let out = restore(&net, &src.image).unwrap();
            report.rows.push(MetricRow {
                image: src.id.clone(),
                level: "clean".into(),
                psnr_db: psnr(&out, &src.image, 1.0).unwrap(),
                ssim: ssim(&out, &src.image).unwrap(),
                input_psnr_db: f64::INFINITY,
            });
        }
        assert!(report.rows.iter().all(|r| r.psnr_db.is_infinite() && r.ssim == 1.0));
        let m = &report.summaries()[0];
        assert_eq!(m.infinite, 3);
        let csv = report.to_csv();
        assert!(csv.starts_with("image,level,psnr_db,ssim\nimg0,clean,inf,1.000000\n"));
        assert!(csv.ends_with("mean,clean,inf,1.000000\n"));
    }

    #[test]
    fn empty_image_list() {
        let net = Network::<f32>::zeroed(RedNetConfig::red10().with_width(2)).unwrap();
        assert!(matches!(
            evaluate(&net, &[], &CorruptionSpec::gaussian(&[30.0]), 0, false),
            Err(Error::Data(_))
        ));
    }
}
