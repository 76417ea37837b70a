//! Image files: binary 8-bit PGM (P5) natively, PNG through the `image` crate.

use std::fs;
use std::path::{Path, PathBuf};

use super::image::{luminance, Image};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Loads a grayscale image with values `v / 255`. RGB inputs are reduced to luma.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return parse_pgm(&bytes).map_err(|m| image_err(path, m));
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(&bytes).map_err(|m| image_err(path, m));
    }
    Err(image_err(path, "unsupported format (expected binary PGM or PNG)"))
}

/// Writes `.pgm` (P5) or `.png` by extension, quantising `round(clip(v) · 255)`.
pub fn save_image<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = quantize(img);
    match extension(path).as_deref() {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let gray = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .expect("buffer length matches dimensions");
            gray.save(path).map_err(|e| image_err(path, e.to_string()))
        }
        _ => Err(image_err(path, "output must end in .pgm or .png")),
    }
}

/// 8-bit pixel values of `img` after clipping.
pub fn quantize<T: Real>(img: &Image<T>) -> Vec<u8> {
    img.pixels()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn parse_pgm<T: Real>(bytes: &[u8]) -> std::result::Result<Image<T>, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header")?;
    }
    let [w, h, maxval] = fields;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("malformed PGM header".into());
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit PGM is supported (maxval {maxval})"));
    }
    if w == 0 || h == 0 {
        return Err("PGM has zero size".into());
    }
    let payload = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| format!("truncated PGM payload: need {} bytes, have {}", w * h, bytes.len() - pos))?;
    let scale = maxval as f64;
    let pixels = payload
        .iter()
        .map(|&b| T::from_f64_lossy(b as f64 / scale))
        .collect();
    Image::new(h, w, pixels).map_err(|e| e.to_string())
}

fn decode_png<T: Real>(bytes: &[u8]) -> std::result::Result<Image<T>, String> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<T> = match decoded {
        image::DynamicImage::ImageLuma8(g) => g
            .into_raw()
            .into_iter()
            .map(|b| T::from_f64_lossy(b as f64 / 255.0))
            .collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| T::from_f64_lossy(luminance(p[0] as f64, p[1] as f64, p[2] as f64)))
            .collect(),
    };
    Image::new(h, w, pixels).map_err(|e| e.to_string())
}

/// `.pgm` and `.png` files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Data(format!("image directory {} does not exist", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(extension(p).as_deref(), Some("pgm" | "png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .pgm or .png images in {}", dir.display())));
    }
    Ok(files)
}
