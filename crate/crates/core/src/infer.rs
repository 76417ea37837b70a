//! Whole-image restoration and the eight-orientation ensemble.

use rayon::prelude::*;

use crate::data::Image;
use crate::error::Result;
use crate::network::Network;
use crate::scalar::Real;

/// Network output on a full image, unclipped.
pub fn restore_raw<T: Real>(net: &Network<T>, img: &Image<T>) -> Result<Image<T>> {
    let out = net.forward(&img.to_tensor())?;
    Image::from_tensor(&out, 0)
}

/// Network output clipped to `[0, 1]`.
pub fn restore<T: Real>(net: &Network<T>, img: &Image<T>) -> Result<Image<T>> {
    Ok(restore_raw(net, img)?.clipped())
}

/// An element of the symmetry group of the square: pixel `(y, x)` of the
/// result reads the source at `(y, x)` (or `(x, y)` when `transpose`), with
/// source rows and columns optionally reversed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub transpose: bool,
    pub flip_rows: bool,
    pub flip_cols: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        transpose: false,
        flip_rows: false,
        flip_cols: false,
    };

    /// All eight elements, identity first.
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral {
                transpose: i & 4 != 0,
                flip_rows: i & 2 != 0,
                flip_cols: i & 1 != 0,
            };
        }
        out
    }

    pub fn inverse(self) -> Dihedral {
        if self.transpose {
            Dihedral {
                transpose: true,
                flip_rows: self.flip_cols,
                flip_cols: self.flip_rows,
            }
        } else {
            self
        }
    }

    /// Rearranges pixels; no arithmetic is performed.
    pub fn apply<T: Real>(self, img: &Image<T>) -> Image<T> {
        let (h, w) = (img.height(), img.width());
        let (oh, ow) = if self.transpose { (w, h) } else { (h, w) };
        Image::from_fn(oh, ow, |y, x| {
            let (mut sy, mut sx) = if self.transpose { (x, y) } else { (y, x) };
            if self.flip_rows {
                sy = h - 1 - sy;
            }
            if self.flip_cols {
                sx = w - 1 - sx;
            }
            img.get(sy, sx)
        })
        .expect("dims are unchanged or swapped")
    }
}

/// Mean of `T⁻¹(F(T(img)))` over all eight `T`, clipped once at the end.
///
/// Per pixel the eight values are sorted before summing. Restoring a
/// transformed image permutes the branches, so the sorted sum makes the
/// ensemble exactly equivariant.
pub fn restore_ensemble<T: Real>(net: &Network<T>, img: &Image<T>) -> Result<Image<T>> {
    let branches: Vec<Image<T>> = Dihedral::all()
        .par_iter()
        .map(|d| Ok(d.inverse().apply(&restore_raw(net, &d.apply(img))?)))
        .collect::<Result<_>>()?;
    let mut out = img.clone();
    let mut vals = [0.0f64; 8];
    for (i, px) in out.pixels_mut().iter_mut().enumerate() {
        for (v, b) in vals.iter_mut().zip(&branches) {
            *v = b.pixels()[i].as_f64();
        }
        vals.sort_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / 8.0;
        *px = T::from_f64_lossy(mean);
    }
    Ok(out.clipped())
}
