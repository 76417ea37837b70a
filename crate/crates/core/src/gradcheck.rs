//! Central finite-difference checks for the layer and network backward passes.
//!
//! Every check uses the scalar objective `J = <F(·), r>` for a fixed random
//! `r`, so the analytic gradient is `backward(r)`. Relative error is
//! `|a − d| / max(|a|, |d|, REL_FLOOR)`; the floor keeps gradients that are
//! zero on both sides (dead units) from dividing by zero.

use rand::Rng;

use crate::error::Result;
use crate::layers::{
    conv2d_backward, conv2d_forward, deconv2d_forward, relu_backward, relu_forward, skip_add_backward, skip_add_forward, ConvSpec, LayerKind,
};
use crate::network::{Network, RedNetConfig};
use crate::rng::{fill_normal, seeded};
use crate::tensor::{Shape4, Tensor4};

pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error over the compared entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries left out because a perturbation flipped some unit's
    /// rectification (the objective is not differentiable there).
    pub skipped: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: Shape4) -> Tensor4<f64> {
    let mut data = vec![0.0; shape.len()];
    fill_normal(rng, &mut data, 0.0, 1.0);
    Tensor4::from_shape_vec(shape, data).expect("length matches shape")
}

/// Compares `analytic` with central differences of `objective` at `x`.
pub fn compare(
    x: &mut [f64],
    analytic: &[f64],
    eps: f64,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    let mut report = GradReport::default();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = objective(x);
        x[i] = orig - eps;
        let minus = objective(x);
        x[i] = orig;
        report.record(analytic[i], (plus - minus) / (2.0 * eps));
    }
    report
}

/// Checks input, weight and bias gradients of one conv or deconv layer.
pub fn check_layer(kind: LayerKind, spec: ConvSpec, n: usize, h: usize, w: usize, seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let x = random_tensor(&mut rng, Shape4::new(n, spec.in_ch, h, w));
    let weight = random_tensor(&mut rng, kind.weight_shape(&spec));
    let mut bias = vec![0.0; spec.out_ch];
    fill_normal(&mut rng, &mut bias, 0.0, 1.0);
    let out = kind.forward(&x, &weight, &bias, &spec)?;
    let r = random_tensor(&mut rng, out.shape());
    let grads = kind.backward(&x, &weight, &spec, &r)?;
    let j = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| kind.forward(x, w, b, &spec).unwrap().dot(&r).unwrap();

    let mut xs = x.data().to_vec();
    let gx = compare(&mut xs, grads.grad_input.data(), eps, |v| {
        j(&Tensor4::from_shape_vec(x.shape(), v.to_vec()).unwrap(), &weight, &bias)
    });
    let mut ws = weight.data().to_vec();
    let gw = compare(&mut ws, grads.grad_weight.data(), eps, |v| {
        j(&x, &Tensor4::from_shape_vec(weight.shape(), v.to_vec()).unwrap(), &bias)
    });
    let mut bs = bias.clone();
    let gb = compare(&mut bs, &grads.grad_bias, eps, |v| j(&x, &weight, v));
    Ok(gx.merge(gw).merge(gb))
}

/// Rectification on inputs kept at least 0.1 away from the kink.
pub fn check_relu(seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let mut x = random_tensor(&mut rng, Shape4::new(2, 3, 5, 4));
    for v in x.data_mut() {
        *v += 0.1f64.copysign(*v);
    }
    let r = random_tensor(&mut rng, x.shape());
    let g = relu_backward(&x, &r)?;
    let shape = x.shape();
    let mut xs = x.data().to_vec();
    Ok(compare(&mut xs, g.data(), eps, |v| {
        relu_forward(&Tensor4::from_shape_vec(shape, v.to_vec()).unwrap()).dot(&r).unwrap()
    }))
}

/// `relu(conv(a) + b)`: gradients with respect to both summands and the
/// conv parameters, the shape of a skip join.
pub fn check_skip_chain(seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let spec = ConvSpec::new(2, 3);
    let a = random_tensor(&mut rng, Shape4::new(2, 2, 6, 5));
    let b = random_tensor(&mut rng, Shape4::new(2, 3, 6, 5));
    let weight = random_tensor(&mut rng, LayerKind::Conv.weight_shape(&spec));
    let bias = vec![0.1, -0.2, 0.3];
    let r = random_tensor(&mut rng, b.shape());
    let pre = |a: &Tensor4<f64>, b: &Tensor4<f64>, w: &Tensor4<f64>| {
        skip_add_forward(b, &conv2d_forward(a, w, &bias, &spec).unwrap()).unwrap()
    };
    let j = |a: &Tensor4<f64>, b: &Tensor4<f64>, w: &Tensor4<f64>| relu_forward(&pre(a, b, w)).dot(&r).unwrap();

    let s = pre(&a, &b, &weight);
    let g_sum = relu_backward(&s, &r)?;
    let (g_skip, g_conv) = skip_add_backward(&g_sum);
    let conv = conv2d_backward(&a, &weight, &spec, &g_conv)?;

    let masks_match = |a: &Tensor4<f64>, b: &Tensor4<f64>, w: &Tensor4<f64>| {
        pre(a, b, w).data().iter().zip(s.data()).all(|(p, q)| (*p > 0.0) == (*q > 0.0))
    };
    let mut report = GradReport::default();
    let mut fd = |t: &Tensor4<f64>, analytic: &[f64], f: &dyn Fn(&Tensor4<f64>) -> (f64, bool)| {
        let mut v = t.clone();
        for i in 0..t.len() {
            let orig = v.data()[i];
            v.data_mut()[i] = orig + eps;
            let (plus, ok_p) = f(&v);
            v.data_mut()[i] = orig - eps;
            let (minus, ok_m) = f(&v);
            v.data_mut()[i] = orig;
            if ok_p && ok_m {
                report.record(analytic[i], (plus - minus) / (2.0 * eps));
            } else {
                report.skipped += 1;
            }
        }
    };
    fd(&a, conv.grad_input.data(), &|t| (j(t, &b, &weight), masks_match(t, &b, &weight)));
    fd(&b, g_skip.data(), &|t| (j(&a, t, &weight), masks_match(&a, t, &weight)));
    fd(&weight, conv.grad_weight.data(), &|t| (j(&a, &b, t), masks_match(&a, &b, t)));
    Ok(report)
}

/// End-to-end check of every parameter and the input of a freshly built net.
pub fn check_network(config: RedNetConfig, n: usize, h: usize, w: usize, seed: u64, eps: f64) -> Result<GradReport> {
    let mut net = Network::<f64>::build(config.clone(), seed)?;
    let mut rng = seeded(seed ^ 0x5eed);
    // Non-zero biases so that bias gradients are exercised away from zero.
    for layer in net.layers_mut() {
        fill_normal(&mut rng, &mut layer.bias, 0.0, 0.1);
    }
    let x = random_tensor(&mut rng, Shape4::new(n, config.in_channels, h, w));
    let trace = net.forward_trace(&x)?;
    let r = random_tensor(&mut rng, trace.output.shape());
    let grads = net.backward_from_trace(&trace, &r)?;
    let mask = |t: &crate::network::ForwardTrace<f64>| -> Vec<bool> {
        t.activations[1..].iter().flat_map(|a| a.data().iter().map(|v| *v > 0.0)).collect()
    };
    let base_mask = mask(&trace);
    let eval = |net: &Network<f64>, x: &Tensor4<f64>| {
        let t = net.forward_trace(x).unwrap();
        (t.output.dot(&r).unwrap(), mask(&t) == base_mask)
    };

    let mut report = GradReport::default();
    let mut record = |plus: (f64, bool), minus: (f64, bool), analytic: f64| {
        if plus.1 && minus.1 {
            report.record(analytic, (plus.0 - minus.0) / (2.0 * eps));
        } else {
            report.skipped += 1;
        }
    };

    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    for (p, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = net.params()[p][i];
            net.params_mut()[p][i] = orig + eps;
            let plus = eval(&net, &x);
            net.params_mut()[p][i] = orig - eps;
            let minus = eval(&net, &x);
            net.params_mut()[p][i] = orig;
            record(plus, minus, g[i]);
        }
    }
    let mut xv = x.clone();
    for i in 0..x.len() {
        let orig = xv.data()[i];
        xv.data_mut()[i] = orig + eps;
        let plus = eval(&net, &xv);
        xv.data_mut()[i] = orig - eps;
        let minus = eval(&net, &xv);
        xv.data_mut()[i] = orig;
        record(plus, minus, grads.input.data()[i]);
    }
    Ok(report)
}

/// `|<conv(x), y> − <x, deconv(y)>| / |<conv(x), y>|` with one shared
/// weight buffer and zero biases.
///
/// `y` is `oh × ow`; `x` takes the deconv output size for that grid, which
/// is the input size whose convolution lands exactly on `oh × ow`.
pub fn adjoint_gap(k: usize, stride: usize, pad: usize, oh: usize, ow: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let (cin, cout) = (2, 3);
    let conv = ConvSpec::new(cin, cout).with_geometry(k, stride, pad);
    let deconv = ConvSpec::new(cout, cin).with_geometry(k, stride, pad);
    let (h, w) = match (deconv.deconv_out_len(oh), deconv.deconv_out_len(ow)) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(crate::error::Error::Geometry(format!(
                "{oh}x{ow} has no deconv output for k={k} s={stride} p={pad}"
            )))
        }
    };
    let weight = random_tensor(&mut rng, LayerKind::Conv.weight_shape(&conv));
    let x = random_tensor(&mut rng, Shape4::new(2, cin, h, w));
    let y = random_tensor(&mut rng, Shape4::new(2, cout, oh, ow));
    let lhs = conv2d_forward(&x, &weight, &[0.0; 3], &conv)?.dot(&y)?;
    let rhs = x.dot(&deconv2d_forward(&y, &weight, &[0.0; 2], &deconv)?)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE))
}
