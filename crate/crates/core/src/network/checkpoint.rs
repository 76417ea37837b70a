//! Binary checkpoint format.
//!
//! ```text
//! "REDN"                  4 bytes
//! version                 u32 little-endian
//! config length           u32 little-endian
//! config                  JSON (RedNetConfig)
//! per layer 1..=2L:
//!     weight              f32 LE, (out, in, kh, kw) row-major
//!     bias                f32 LE, out values
//! ```
//!
//! Deconvolution weights are stored in memory as `(in, out, kh, kw)` and are
//! transposed to `(out, in, kh, kw)` on disk so every layer uses one order.

use std::fs;
use std::path::Path;

use super::{Layer, Network, RedNetConfig};
use crate::error::{Error, Result};
use crate::layers::LayerKind;
use crate::scalar::Real;
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"REDN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Converts between storage order and disk order `(out, in, kh, kw)`.
/// `to_disk` selects the direction; conv layers are already in disk order.
fn reorder<U: Copy>(kind: LayerKind, out_ch: usize, in_ch: usize, area: usize, src: &[U], to_disk: bool) -> Vec<U> {
    if kind == LayerKind::Conv {
        return src.to_vec();
    }
    let mut dst = Vec::with_capacity(src.len());
    if to_disk {
        // src is (in, out, area); emit (out, in, area).
        for o in 0..out_ch {
            for i in 0..in_ch {
                let s = (i * out_ch + o) * area;
                dst.extend_from_slice(&src[s..s + area]);
            }
        }
    } else {
        // src is (out, in, area); emit (in, out, area).
        for i in 0..in_ch {
            for o in 0..out_ch {
                let s = (o * in_ch + i) * area;
                dst.extend_from_slice(&src[s..s + area]);
            }
        }
    }
    dst
}

impl<T: Real> Network<T> {
    /// Serialises the network; parameters are written as 32-bit floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("config serialises");
        let mut out = Vec::with_capacity(12 + config.len() + 4 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        for layer in &self.layers {
            let s = &layer.spec;
            let w = reorder(layer.kind, s.out_ch, s.in_ch, s.kernel * s.kernel, layer.weight.data(), true);
            for v in w.iter().chain(&layer.bias) {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                "REDN"
            )));
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version: expected {CHECKPOINT_VERSION}, found {version}"
            )));
        }
        let len = cur.u32("config length")? as usize;
        let config: RedNetConfig = serde_json::from_slice(cur.take(len, "config record")?)
            .map_err(|e| Error::Format(format!("config record: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::Format(format!("config record: {e}")))?;

        let mut layers = Vec::with_capacity(config.total_layers());
        for l in 1..=config.total_layers() {
            let (kind, spec) = config.layer_spec(l);
            let shape = kind.weight_shape(&spec);
            let disk = cur.f32s(shape.len(), l)?;
            let w = reorder(kind, spec.out_ch, spec.in_ch, spec.kernel * spec.kernel, &disk, false);
            let bias = cur.f32s(spec.out_ch, l)?;
            let conv = |v: &f32| T::from_f64_lossy(*v as f64);
            layers.push(Layer {
                kind,
                spec,
                weight: Tensor4::from_shape_vec(shape, w.iter().map(conv).collect())?,
                bias: bias.iter().map(conv).collect(),
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameter blob",
                bytes.len() - cur.pos
            )));
        }
        Ok(Network::assemble(config, layers))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, layer: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * n, &format!("layer {layer} parameters"))?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::SkipStyle;

    fn net() -> Network<f32> {
        let cfg = RedNetConfig {
            conv_layers: 3,
            feature_width: 3,
            skip_style: SkipStyle::Mirrored,
            ..RedNetConfig::default()
        };
        Network::build(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let back = Network::<f32>::from_bytes(&n.to_bytes()).unwrap();
        assert_eq!(back, n);
        let x = Tensor4::from_vec(1, 1, 5, 4, (0..20).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
        let (a, b) = (n.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn header_layout() {
        let bytes = net().to_bytes();
        assert_eq!(&bytes[..4], b"REDN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cfg: RedNetConfig = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(cfg.conv_layers, 3);
        assert_eq!(bytes.len(), 12 + len + 4 * cfg.param_count());
    }

    #[test]
    fn deconv_weights_written_out_in_order() {
        let n = net();
        let bytes = n.to_bytes();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        // Skip to layer 4 (first deconv): layers 1..3 precede it.
        let mut off = 12 + len;
        for layer in &n.layers()[..3] {
            off += 4 * (layer.weight.len() + layer.bias.len());
        }
        let deconv = &n.layers()[3];
        let s = deconv.spec;
        let read = |i: usize| f32::from_le_bytes(bytes[off + 4 * i..off + 4 * i + 4].try_into().unwrap());
        for o in 0..s.out_ch {
            for i in 0..s.in_ch {
                for t in 0..9 {
                    let disk = read((o * s.in_ch + i) * 9 + t);
                    assert_eq!(disk, deconv.weight.get(i, o, t / 3, t % 3));
                }
            }
        }
    }

    #[test]
    fn truncated_and_version_errors() {
        let bytes = net().to_bytes();
        let err = Network::<f32>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("truncated")));

        let mut bad = bytes.clone();
        bad[4] = 7;
        let err = Network::<f32>::from_bytes(&bad).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("expected 1") && m.contains("found 7")));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Network::<f32>::from_bytes(&bad), Err(Error::Format(_))));

        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Network::<f32>::from_bytes(&extra), Err(Error::Format(_))));
    }
}
