use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ConvSpec, LayerKind};

/// How feature maps are shortcut across the layer stack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SkipStyle {
    #[default]
    None,
    /// Encoder layer `i` feeds its mirrored decoder layer.
    Mirrored,
    /// Residual-network blocks: every `block` layers, the block input is
    /// added to the block output. No mirroring.
    Sequential { block: usize },
}

/// A shortcut from the rectified output of layer `source` to the
/// pre-rectification output of layer `dest` (both 1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkipEdge {
    pub source: usize,
    pub dest: usize,
}

impl From<(usize, usize)> for SkipEdge {
    fn from((source, dest): (usize, usize)) -> Self {
        SkipEdge { source, dest }
    }
}

fn default_width() -> usize {
    64
}
fn default_kernel() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_step() -> usize {
    2
}

/// Architecture of a symmetric conv/deconv encoder-decoder.
///
/// `conv_layers` convolutions are followed by the same number of transposed
/// convolutions, for a total depth of `2 * conv_layers`. Every layer uses the
/// same kernel, stride and padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedNetConfig {
    pub conv_layers: usize,
    #[serde(default = "default_width")]
    pub feature_width: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_one")]
    pub padding: usize,
    #[serde(default)]
    pub skip_style: SkipStyle,
    #[serde(default = "default_step")]
    pub skip_step: usize,
    /// Add the network input to the final output, so the stack fits the residual.
    #[serde(default)]
    pub global_input_skip: bool,
    #[serde(default = "default_one")]
    pub in_channels: usize,
}

impl Default for RedNetConfig {
    fn default() -> Self {
        RedNetConfig {
            conv_layers: 5,
            feature_width: default_width(),
            kernel: default_kernel(),
            stride: 1,
            padding: 1,
            skip_style: SkipStyle::None,
            skip_step: default_step(),
            global_input_skip: false,
            in_channels: 1,
        }
    }
}

impl RedNetConfig {
    /// 5 conv + 5 deconv layers, no shortcuts.
    pub fn red10() -> Self {
        RedNetConfig::default()
    }

    /// 10 conv + 10 deconv layers, mirrored shortcuts every two layers.
    pub fn red20() -> Self {
        RedNetConfig {
            conv_layers: 10,
            skip_style: SkipStyle::Mirrored,
            ..RedNetConfig::default()
        }
    }

    /// 15 conv + 15 deconv layers, mirrored shortcuts every two layers.
    pub fn red30() -> Self {
        RedNetConfig {
            conv_layers: 15,
            skip_style: SkipStyle::Mirrored,
            ..RedNetConfig::default()
        }
    }

    /// Five stride-3 3×3 convolutions (243 px collapse to 1 px) mirrored by
    /// five stride-3 deconvolutions, optionally with mirrored shortcuts at
    /// every level above the bottleneck.
    pub fn bottleneck_stride3(feature_width: usize, skips: bool) -> Self {
        RedNetConfig {
            conv_layers: 5,
            feature_width,
            kernel: 3,
            stride: 3,
            padding: 0,
            skip_style: if skips {
                SkipStyle::Mirrored
            } else {
                SkipStyle::None
            },
            skip_step: 1,
            global_input_skip: false,
            in_channels: 1,
        }
    }

    pub fn with_width(mut self, feature_width: usize) -> Self {
        self.feature_width = feature_width;
        self
    }

    pub fn total_layers(&self) -> usize {
        2 * self.conv_layers
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.conv_layers < 1 {
            return fail("conv_layers must be >= 1");
        }
        if self.feature_width < 1 {
            return fail("feature_width must be >= 1");
        }
        if self.in_channels < 1 {
            return fail("in_channels must be >= 1");
        }
        if self.kernel < 1 || self.stride < 1 {
            return fail("kernel and stride must be >= 1");
        }
        if self.skip_step < 1 {
            return fail("skip_step must be >= 1");
        }
        if let SkipStyle::Sequential { block } = self.skip_style {
            if block < 1 {
                return fail("sequential block size must be >= 1");
            }
            if self.stride != 1 {
                return fail("sequential shortcuts need stride 1 (block ends differ in size otherwise)");
            }
        }
        Ok(())
    }

    /// Kind and geometry of layer `l` (1-based).
    pub fn layer_spec(&self, l: usize) -> (LayerKind, ConvSpec) {
        let (depth, width) = (self.total_layers(), self.feature_width);
        let in_ch = if l == 1 { self.in_channels } else { width };
        let out_ch = if l == depth { self.in_channels } else { width };
        let kind = if l <= self.conv_layers {
            LayerKind::Conv
        } else {
            LayerKind::Deconv
        };
        let spec = ConvSpec::new(in_ch, out_ch).with_geometry(self.kernel, self.stride, self.padding);
        (kind, spec)
    }

    /// Shortcut edges implied by the configuration, sorted by source.
    ///
    /// Mirrored shortcuts start at the deepest encoder layer and step
    /// outwards by `skip_step`. At stride 1 encoder layer `i` pairs with
    /// decoder layer `2L + 1 − i`. With a larger stride that decoder layer
    /// outputs a larger map than layer `i`, so the shortcut lands one layer
    /// earlier, at `2L − i`, starting from `i = L − 1`. Edges into the
    /// final layer are never produced: its channel count differs, and the
    /// input-to-output shortcut is `global_input_skip`.
    pub fn skip_edges(&self) -> Vec<SkipEdge> {
        let l = self.conv_layers;
        let depth = self.total_layers();
        let mut edges: Vec<SkipEdge> = match self.skip_style {
            SkipStyle::None => Vec::new(),
            SkipStyle::Mirrored => {
                let (start, offset) = if self.stride == 1 {
                    (l, 2 * l + 1)
                } else {
                    (l.saturating_sub(1), 2 * l)
                };
                (1..=start)
                    .rev()
                    .step_by(self.skip_step.max(1))
                    .map(|i| SkipEdge::from((i, offset - i)))
                    .filter(|e| e.dest < depth)
                    .collect()
            }
            SkipStyle::Sequential { block } => {
                let block = block.max(1);
                (1..)
                    .step_by(block)
                    .map(|s| SkipEdge::from((s, s + block)))
                    .take_while(|e| e.dest < depth)
                    .collect()
            }
        };
        edges.sort();
        edges
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        (1..=self.total_layers())
            .map(|l| {
                let (_, s) = self.layer_spec(l);
                s.kernel * s.kernel * s.in_ch * s.out_ch + s.out_ch
            })
            .sum()
    }

    /// Spatial size of every layer's output for an `h × w` input, or a
    /// geometry error if a layer has no output or the decoder does not
    /// return to the input size.
    pub fn layer_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut sizes = Vec::with_capacity(self.total_layers() + 1);
        sizes.push((h, w));
        let (mut ch, mut cw) = (h, w);
        for l in 1..=self.total_layers() {
            let (kind, spec) = self.layer_spec(l);
            match (kind.out_len(&spec, ch), kind.out_len(&spec, cw)) {
                (Some(a), Some(b)) => {
                    ch = a;
                    cw = b;
                }
                _ => {
                    return Err(Error::Geometry(format!(
                        "layer {l} has no output for a {ch}x{cw} input (input {h}x{w})"
                    )))
                }
            }
            sizes.push((ch, cw));
        }
        if (ch, cw) != (h, w) {
            return Err(Error::Geometry(format!(
                "network maps a {h}x{w} input to {ch}x{cw}; output must match input"
            )));
        }
        for e in self.skip_edges() {
            if sizes[e.source] != sizes[e.dest] {
                return Err(Error::Geometry(format!(
                    "shortcut {}->{} joins {:?} and {:?} maps for a {h}x{w} input",
                    e.source, e.dest, sizes[e.source], sizes[e.dest]
                )));
            }
        }
        Ok(sizes)
    }
}
