//! The encoder-decoder layer stack: construction, forward and backward
//! traversal, and checkpoint persistence.

mod checkpoint;
mod config;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{RedNetConfig, SkipEdge, SkipStyle};

use crate::error::{Error, Result};
use crate::layers::{relu_backward, relu_forward, ConvSpec, LayerKind};
use crate::rng::{fill_normal, seeded};
use crate::scalar::Real;
use crate::tensor::{Shape4, Tensor4};

/// One convolution or transposed convolution with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub spec: ConvSpec,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: RedNetConfig,
    layers: Vec<Layer<T>>,
    skips: Vec<SkipEdge>,
}

/// Activations kept from a forward pass for the backward pass.
///
/// `activations[0]` is the input; `activations[l]` is the output of layer
/// `l` after its shortcut sum and rectification (the last layer is linear).
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub activations: Vec<Tensor4<T>>,
    pub output: Tensor4<T>,
}

#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Gradients of a scalar objective with respect to every parameter and the input.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<ParamGrads<T>>,
    pub input: Tensor4<T>,
}

impl<T: Real> Gradients<T> {
    /// Parameter gradient slices in [`Network::params_mut`] order.
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weight.data(), g.bias.as_slice()])
            .collect()
    }

    /// Euclidean norm of the weight and bias gradients of layer `l` (1-based).
    pub fn layer_norm(&self, l: usize) -> f64 {
        let g = &self.layers[l - 1];
        let sq = g.weight.norm_sq().as_f64() + g.bias.iter().map(|b| b.as_f64().powi(2)).sum::<f64>();
        sq.sqrt()
    }
}

impl<T: Real> Network<T> {
    /// Builds a network with He-scaled Gaussian weights and zero biases.
    pub fn build(config: RedNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let layers = (1..=config.total_layers())
            .map(|l| {
                let (kind, spec) = config.layer_spec(l);
                let shape = kind.weight_shape(&spec);
                let fan_in = spec.kernel * spec.kernel * spec.in_ch;
                let mut w = vec![0.0; shape.len()];
                fill_normal(&mut rng, &mut w, 0.0, (2.0 / fan_in as f64).sqrt());
                Layer {
                    kind,
                    spec,
                    weight: Tensor4::from_shape_vec(shape, w.into_iter().map(T::from_f64_lossy).collect())
                        .expect("weight shape from config"),
                    bias: vec![T::zero(); spec.out_ch],
                }
            })
            .collect();
        Ok(Self::assemble(config, layers))
    }

    /// All weights and biases zero.
    pub fn zeroed(config: RedNetConfig) -> Result<Self> {
        config.validate()?;
        let layers = (1..=config.total_layers())
            .map(|l| {
                let (kind, spec) = config.layer_spec(l);
                Layer {
                    kind,
                    spec,
                    weight: Tensor4::zeros_shape(kind.weight_shape(&spec)),
                    bias: vec![T::zero(); spec.out_ch],
                }
            })
            .collect();
        Ok(Self::assemble(config, layers))
    }

    pub(crate) fn assemble(config: RedNetConfig, layers: Vec<Layer<T>>) -> Self {
        let skips = config.skip_edges();
        Network {
            config,
            layers,
            skips,
        }
    }

    pub fn config(&self) -> &RedNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn skip_edges(&self) -> &[SkipEdge] {
        &self.skips
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable parameter slices: layer 1 weight, layer 1 bias, layer 2 weight, ...
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                kind: l.kind,
                spec: l.spec,
                weight: l.weight.cast(),
                bias: l.bias.iter().map(|b| U::from_f64_lossy(b.as_f64())).collect(),
            })
            .collect();
        Network::assemble(self.config.clone(), layers)
    }

    fn skip_into(&self, dest: usize) -> Option<usize> {
        self.skips.iter().find(|e| e.dest == dest).map(|e| e.source)
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels, s.c
            )));
        }
        self.config.layer_sizes(s.h, s.w).map(|_| ())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &Tensor4<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let depth = self.layers.len();
        let mut acts: Vec<Tensor4<T>> = Vec::with_capacity(depth + 1);
        acts.push(x.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let l = idx + 1;
            let mut z = layer.kind.forward(&acts[idx], &layer.weight, &layer.bias, &layer.spec)?;
            if let Some(src) = self.skip_into(l) {
                z.add_assign(&acts[src])
                    .map_err(|e| Error::Geometry(format!("shortcut {src}->{l}: {e}")))?;
            }
            acts.push(if l < depth { relu_forward(&z) } else { z });
        }
        let mut output = acts[depth].clone();
        if self.config.global_input_skip {
            output.add_assign(x)?;
        }
        Ok(ForwardTrace {
            activations: acts,
            output,
        })
    }

    /// Gradients of `Σ grad_out ⊙ forward(x)`.
    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Gradients<T>> {
        let trace = self.forward_trace(x)?;
        self.backward_from_trace(&trace, grad_out)
    }

    pub fn backward_from_trace(&self, trace: &ForwardTrace<T>, grad_out: &Tensor4<T>) -> Result<Gradients<T>> {
        trace.output.check_same_shape(grad_out, "network backward")?;
        let depth = self.layers.len();
        let acts = &trace.activations;
        let mut pending: Vec<Option<Tensor4<T>>> = vec![None; depth + 1];
        pending[depth] = Some(grad_out.clone());
        let mut grads: Vec<Option<ParamGrads<T>>> = vec![None; depth];

        for l in (1..=depth).rev() {
            let layer = &self.layers[l - 1];
            let g_act = pending[l]
                .take()
                .unwrap_or_else(|| Tensor4::zeros_like(&acts[l]));
            // acts[l] > 0 exactly where the pre-activation is > 0.
            let g_pre = if l < depth {
                relu_backward(&acts[l], &g_act)?
            } else {
                g_act
            };
            if let Some(src) = self.skip_into(l) {
                accumulate(&mut pending[src], &g_pre)?;
            }
            let lg = layer.kind.backward(&acts[l - 1], &layer.weight, &layer.spec, &g_pre)?;
            accumulate(&mut pending[l - 1], &lg.grad_input)?;
            grads[l - 1] = Some(ParamGrads {
                weight: lg.grad_weight,
                bias: lg.grad_bias,
            });
        }

        let mut input = pending[0]
            .take()
            .unwrap_or_else(|| Tensor4::zeros_like(&acts[0]));
        if self.config.global_input_skip {
            input.add_assign(grad_out)?;
        }
        Ok(Gradients {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            input,
        })
    }

    /// Shape of the output for a batch of `n` single-channel `h × w` inputs.
    pub fn output_shape(&self, n: usize, h: usize, w: usize) -> Result<Shape4> {
        self.config.layer_sizes(h, w)?;
        Ok(Shape4::new(n, self.config.in_channels, h, w))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor4<T>>, g: &Tensor4<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(style: SkipStyle, global: bool) -> RedNetConfig {
        RedNetConfig {
            conv_layers: 2,
            feature_width: 2,
            skip_style: style,
            skip_step: 1,
            global_input_skip: global,
            ..RedNetConfig::default()
        }
    }

    #[test]
    fn preset_layer_counts() {
        let net = Network::<f32>::build(RedNetConfig::red10().with_width(4), 0).unwrap();
        assert_eq!(net.layers().len(), 10);
        assert!(net.skip_edges().is_empty());
        let (first, last) = (&net.layers()[0], &net.layers()[9]);
        assert_eq!((first.spec.in_ch, first.spec.out_ch), (1, 4));
        assert_eq!((last.spec.in_ch, last.spec.out_ch), (4, 1));
        assert_eq!(last.kind, LayerKind::Deconv);
        assert_eq!(net.param_count(), RedNetConfig::red10().with_width(4).param_count());
    }

    #[test]
    fn build_is_deterministic() {
        let a = Network::<f32>::build(RedNetConfig::red20().with_width(8), 42).unwrap();
        let b = Network::<f32>::build(RedNetConfig::red20().with_width(8), 42).unwrap();
        let c = Network::<f32>::build(RedNetConfig::red20().with_width(8), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_network_outputs() {
        let x = Tensor4::from_vec(1, 1, 3, 3, (0..9).map(|v| v as f32 / 9.0).collect()).unwrap();
        let off = Network::<f32>::zeroed(tiny(SkipStyle::Mirrored, false)).unwrap();
        assert!(off.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        let on = Network::<f32>::zeroed(tiny(SkipStyle::Mirrored, true)).unwrap();
        assert_eq!(on.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let net = Network::<f64>::build(tiny(SkipStyle::Mirrored, true), 1).unwrap();
        let x = Tensor4::filled(1, 1, 6, 6, 0.5).unwrap();
        let g = net.backward(&x, &Tensor4::zeros_like(&x)).unwrap();
        for s in g.slices() {
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_preserved_over_many_sizes() {
        let net = Network::<f32>::build(RedNetConfig::red20().with_width(2), 3).unwrap();
        let mut rng = crate::rng::seeded(0);
        for h in 1..=64 {
            for w in [1, 2, 7, 33, 64] {
                let x = Tensor4::filled(1, 1, h, w, rng.gen::<f32>()).unwrap();
                assert_eq!(net.forward(&x).unwrap().shape(), x.shape());
            }
        }
    }

    #[test]
    fn wrong_channels_or_grad_shape() {
        let net = Network::<f32>::build(tiny(SkipStyle::None, false), 0).unwrap();
        let x = Tensor4::zeros(1, 2, 6, 6).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Shape(_))));
        let x = Tensor4::zeros(1, 1, 6, 6).unwrap();
        let g = Tensor4::zeros(1, 1, 5, 6).unwrap();
        assert!(matches!(net.backward(&x, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn strided_net_rejects_bad_sizes() {
        let net = Network::<f32>::build(RedNetConfig::bottleneck_stride3(2, true), 0).unwrap();
        let x = Tensor4::zeros(1, 1, 200, 200).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Geometry(_))));
        let x = Tensor4::zeros(1, 1, 2, 2).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Geometry(_))));
        let x = Tensor4::zeros(1, 1, 243, 243).unwrap();
        assert_eq!(net.forward(&x).unwrap().shape(), x.shape());
    }
}
