//! Training and evaluation data: image I/O, patch sampling and the two
//! degradation models (additive Gaussian noise, bicubic down/up-sampling).
//!
//! Pixels live in `[0, 1]`. Noise levels are quoted on the 8-bit scale
//! (`σ = 30` means a standard deviation of `30 / 255`). Noisy inputs are not
//! clipped; super-resolution inputs are.

mod image;
mod io;
mod resize;
pub mod synthetic;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::image::{luminance, Image};
pub use self::io::{list_images, load_image, quantize, save_image};
pub use self::resize::{degrade_sr, keys_cubic, resize_bicubic};

use crate::error::{Error, Result};
use crate::rng::fill_normal;
use crate::scalar::Real;

/// One concrete degradation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// Additive white Gaussian noise, σ on the 0–255 scale.
    Gaussian { sigma: f64 },
    /// Bicubic down- then up-sampling by an integer factor.
    Sr { scale: usize },
}

impl Corruption {
    pub fn apply<T: Real, R: Rng + ?Sized>(&self, img: &Image<T>, rng: &mut R) -> Result<Image<T>> {
        match *self {
            Corruption::Gaussian { sigma } => Ok(corrupt_gaussian(img, sigma, rng)),
            Corruption::Sr { scale } => degrade_sr(img, scale),
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Gaussian { sigma } => write!(f, "sigma={sigma}"),
            Corruption::Sr { scale } => write!(f, "scale={scale}"),
        }
    }
}

/// The set of degradation levels a model is trained or evaluated on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CorruptionSpec {
    Gaussian { sigmas: Vec<f64> },
    Sr { scales: Vec<usize> },
}

impl CorruptionSpec {
    pub fn gaussian(sigmas: &[f64]) -> Self {
        CorruptionSpec::Gaussian {
            sigmas: sigmas.to_vec(),
        }
    }

    pub fn sr(scales: &[usize]) -> Self {
        CorruptionSpec::Sr {
            scales: scales.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CorruptionSpec::Gaussian { sigmas } => {
                if sigmas.is_empty() || sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::Config(format!("noise sigmas must be a non-empty list of values > 0: {sigmas:?}")));
                }
            }
            CorruptionSpec::Sr { scales } => {
                if scales.is_empty() || scales.iter().any(|&s| s < 2) {
                    return Err(Error::Config(format!("SR scales must be a non-empty list of integers >= 2: {scales:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<Corruption> {
        match self {
            CorruptionSpec::Gaussian { sigmas } => sigmas.iter().map(|&sigma| Corruption::Gaussian { sigma }).collect(),
            CorruptionSpec::Sr { scales } => scales.iter().map(|&scale| Corruption::Sr { scale }).collect(),
        }
    }

    /// A level chosen uniformly at random; no draw is consumed for a single level.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Corruption {
        let levels = self.levels();
        if levels.len() == 1 {
            levels[0]
        } else {
            levels[rng.gen_range(0..levels.len())]
        }
    }
}

/// Adds i.i.d. `N(0, (σ/255)²)` noise to every pixel. The result is not clipped.
pub fn corrupt_gaussian<T: Real, R: Rng + ?Sized>(patch: &Image<T>, sigma_255: f64, rng: &mut R) -> Image<T> {
    let mut noise = vec![0.0; patch.pixels().len()];
    fill_normal(rng, &mut noise, 0.0, sigma_255 / 255.0);
    let mut out = patch.clone();
    out.pixels_mut()
        .iter_mut()
        .zip(noise)
        .for_each(|(p, n)| *p = T::from_f64_lossy(p.as_f64() + n));
    out
}

/// An image together with the identifier recorded in patch provenance.
#[derive(Clone, Debug)]
pub struct SourceImage<T> {
    pub id: String,
    pub image: Image<T>,
}

impl<T: Real> SourceImage<T> {
    pub fn new(id: impl Into<String>, image: Image<T>) -> Self {
        SourceImage { id: id.into(), image }
    }
}

/// Where a patch came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub image: String,
    pub y: usize,
    pub x: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
}

#[derive(Clone, Debug)]
pub struct Patch<T> {
    pub pixels: Image<T>,
    pub provenance: Provenance,
}

/// `count` square patches of side `p`, taken round-robin from `images` at
/// uniformly random offsets.
pub fn sample_patches<T: Real, R: Rng + ?Sized>(
    images: &[SourceImage<T>],
    p: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Patch<T>>> {
    if images.is_empty() {
        return Err(Error::Data("no source images to sample patches from".into()));
    }
    if count == 0 || p == 0 {
        return Err(Error::Data("patch size and count must be >= 1".into()));
    }
    for src in images {
        let (h, w) = (src.image.height(), src.image.width());
        if h < p || w < p {
            return Err(Error::Data(format!(
                "image {} is {h}x{w}, smaller than the {p}x{p} patch size",
                src.id
            )));
        }
    }
    (0..count)
        .map(|k| {
            let src = &images[k % images.len()];
            let y = rng.gen_range(0..=src.image.height() - p);
            let x = rng.gen_range(0..=src.image.width() - p);
            Ok(Patch {
                pixels: src.image.crop(y, x, p, p)?,
                provenance: Provenance {
                    image: src.id.clone(),
                    y,
                    x,
                    corruption: None,
                },
            })
        })
        .collect()
}

/// A corrupted input with its clean target.
#[derive(Clone, Debug)]
pub struct PatchPair<T> {
    pub input: Image<T>,
    pub target: Image<T>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default)]
pub struct PatchSet<T> {
    pub pairs: Vec<PatchPair<T>>,
}

impl<T: Real> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// JSON array with one provenance record per pair.
    pub fn manifest_json(&self) -> String {
        let records: Vec<&Provenance> = self.pairs.iter().map(|p| &p.provenance).collect();
        serde_json::to_string_pretty(&records).expect("provenance serialises")
    }
}

/// Samples clean patches and pairs each with a corrupted copy. With several
/// levels in `spec`, each pair's level is drawn uniformly.
pub fn make_dataset<T: Real, R: Rng + ?Sized>(
    images: &[SourceImage<T>],
    spec: &CorruptionSpec,
    p: usize,
    count: usize,
    rng: &mut R,
) -> Result<PatchSet<T>> {
    spec.validate()?;
    let patches = sample_patches(images, p, count, rng)?;
    let pairs = patches
        .into_iter()
        .map(|patch| {
            let level = spec.draw(rng);
            let input = level.apply(&patch.pixels, rng)?;
            let mut provenance = patch.provenance;
            provenance.corruption = Some(level);
            Ok(PatchPair {
                input,
                target: patch.pixels,
                provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn sources(n: usize, size: usize) -> Vec<SourceImage<f32>> {
        (0..n)
            .map(|i| SourceImage::new(format!("img{i}"), synthetic::scene(size, size + 3, i as u64)))
            .collect()
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let src = vec![SourceImage::new("c", Image::filled(20, 20, 0.25f32).unwrap())];
        let patches = sample_patches(&src, 8, 30, &mut seeded(1)).unwrap();
        assert!(patches.iter().all(|p| p.pixels.pixels().iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn sampling_is_deterministic_and_round_robin() {
        let src = sources(3, 30);
        let a = sample_patches(&src, 10, 9, &mut seeded(7)).unwrap();
        let b = sample_patches(&src, 10, 9, &mut seeded(7)).unwrap();
        let offs = |v: &[Patch<f32>]| v.iter().map(|p| p.provenance.clone()).collect::<Vec<_>>();
        assert_eq!(offs(&a), offs(&b));
        for (k, p) in a.iter().enumerate() {
            assert_eq!(p.provenance.image, format!("img{}", k % 3));
            assert!(p.provenance.y <= 20 && p.provenance.x <= 23);
        }
    }

    #[test]
    fn patches_per_image_average() {
        // 0.5M patches over 300 images.
        let per_image = 500_000.0 / 300.0;
        assert!((per_image - 1666.67f64).abs() < 0.01);
        let src = sources(3, 12);
        let patches = sample_patches(&src, 4, 30, &mut seeded(0)).unwrap();
        for i in 0..3 {
            let n = patches.iter().filter(|p| p.provenance.image == format!("img{i}")).count();
            assert_eq!(n, 10);
        }
    }

    #[test]
    fn small_image_is_named_in_error() {
        let mut src = sources(2, 30);
        src.push(SourceImage::new("tiny.pgm", Image::filled(5, 40, 0.0).unwrap()));
        let err = sample_patches(&src, 10, 5, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("tiny.pgm")));
    }

    #[test]
    fn gaussian_noise_statistics() {
        let clean = Image::filled(1000, 1000, 0.5f64).unwrap();
        let noisy = corrupt_gaussian(&clean, 30.0, &mut seeded(12));
        let n = 1e6;
        let diffs: Vec<f64> = noisy.pixels().iter().map(|v| v - 0.5).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sigma = 30.0 / 255.0;
        assert!(mean.abs() <= 3.0 * sigma / 1000.0, "mean {mean}");
        assert!((std - sigma).abs() <= 0.005 * sigma, "std {std}");
    }

    #[test]
    fn noise_is_unclipped_and_seeded() {
        let clean = Image::filled(64, 64, 0.98f32).unwrap();
        let a = corrupt_gaussian(&clean, 50.0, &mut seeded(3));
        assert!(a.pixels().iter().any(|&v| v > 1.0));
        assert_eq!(a, corrupt_gaussian(&clean, 50.0, &mut seeded(3)));
        let tiny = corrupt_gaussian(&clean, 1e-9, &mut seeded(3));
        assert!(tiny.pixels().iter().all(|&v| (v - 0.98).abs() < 1e-6));
    }

    #[test]
    fn single_level_dataset() {
        let set = make_dataset(&sources(2, 40), &CorruptionSpec::gaussian(&[30.0]), 16, 12, &mut seeded(5)).unwrap();
        assert_eq!(set.len(), 12);
        for pair in &set.pairs {
            assert_eq!(pair.provenance.corruption, Some(Corruption::Gaussian { sigma: 30.0 }));
            assert!(pair.input.same_size(&pair.target));
        }
        let json: serde_json::Value = serde_json::from_str(&set.manifest_json()).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 12);
    }

    #[test]
    fn mixed_levels_are_uniform() {
        // 4000 draws over 4 levels: each count ~ Binomial(4000, 1/4), sd = sqrt(750).
        let spec = CorruptionSpec::gaussian(&[10.0, 30.0, 50.0, 70.0]);
        let src = vec![SourceImage::new("c", Image::filled(4, 4, 0.5f32).unwrap())];
        let set = make_dataset(&src, &spec, 4, 4000, &mut seeded(8)).unwrap();
        let bound = 3.0 * 750f64.sqrt();
        for level in spec.levels() {
            let n = set.pairs.iter().filter(|p| p.provenance.corruption == Some(level)).count();
            assert!((n as f64 - 1000.0).abs() <= bound, "{level}: {n}");
        }
    }

    #[test]
    fn sr_dataset_at_48() {
        let spec = CorruptionSpec::sr(&[2, 3, 4]);
        let set = make_dataset(&sources(2, 60), &spec, 48, 9, &mut seeded(2)).unwrap();
        for pair in &set.pairs {
            assert_eq!(pair.input.height(), 48);
            assert!(pair.input.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(CorruptionSpec::gaussian(&[]).validate().is_err());
        assert!(CorruptionSpec::gaussian(&[0.0]).validate().is_err());
        assert!(CorruptionSpec::sr(&[1]).validate().is_err());
        let parsed: CorruptionSpec = serde_json::from_str(r#"{"gaussian": {"sigmas": [10, 30]}}"#).unwrap();
        assert_eq!(parsed, CorruptionSpec::gaussian(&[10.0, 30.0]));
    }
}
