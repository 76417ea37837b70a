//! Training objective and parameter updates.
//!
//! The loss is the batch-averaged squared Frobenius error
//! `L = (1/N) Σᵢ ‖F(Xᵢ) − Yᵢ‖²_F`. It is normalised by the batch size only,
//! not by pixel count, so logged values scale with patch area.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Image, PatchSet};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng::seeded;
use crate::scalar::Real;
use crate::tensor::Tensor4;

/// Loss value and its gradient with respect to `pred`.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    pred.check_same_shape(target, "mse_loss")?;
    let n = pred.shape().n as f64;
    let diff = pred.sub(target)?;
    let sq: f64 = diff.data().iter().map(|d| d.as_f64() * d.as_f64()).sum();
    let grad = diff.scale(T::from_f64_lossy(2.0 / n));
    Ok((T::from_f64_lossy(sq / n), grad))
}

fn check_aligned<T>(params: &[&mut [T]], grads: &[&[T]]) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("parameter and gradient lists do not align"));
    }
    Ok(())
}

/// `θ ← θ − lr · g`
pub fn sgd_step<T: Real>(params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
    check_aligned(params, grads)?;
    let lr = T::from_f64_lossy(lr);
    for (p, g) in params.iter_mut().zip(grads) {
        p.iter_mut().zip(g.iter()).for_each(|(p, &g)| *p -= lr * g);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter slice.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[&[T]], hyper: AdamHyper) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        AdamState {
            hyper,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn for_network(net: &Network<T>, lr: f64) -> Self {
        Self::new(&net.params(), AdamHyper { lr, ..AdamHyper::default() })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(params: &mut [&mut [T]], grads: &[&[T]], state: &mut AdamState<T>) -> Result<()> {
    check_aligned(params, grads)?;
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::shape("Adam state does not match the parameter list"));
    }
    state.t += 1;
    let h = state.hyper;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64_lossy(h.beta1), T::from_f64_lossy(h.beta2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - h.beta1), T::from_f64_lossy(1.0 - h.beta2));
    let corr1 = T::from_f64_lossy(1.0 / (1.0 - h.beta1.powi(t)));
    let corr2 = T::from_f64_lossy(1.0 / (1.0 - h.beta2.powi(t)));
    let (lr, eps) = (T::from_f64_lossy(h.lr), T::from_f64_lossy(h.eps));

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            let m_hat = m[i] * corr1;
            let v_hat = v[i] * corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_iterations() -> usize {
    1000
}
fn default_batch() -> usize {
    8
}
fn default_interval() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record the loss every this many iterations.
    #[serde(default = "default_interval")]
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: default_lr(),
            iterations: default_iterations(),
            batch_size: default_batch(),
            seed: 0,
            log_interval: default_interval(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if self.iterations < 1 || self.batch_size < 1 || self.log_interval < 1 {
            return Err(Error::Config(
                "train.iterations, train.batch_size and train.log_interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `(iteration, loss)` rows, iterations counted from 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    /// Mean of the first `k` logged losses.
    pub fn head_mean(&self, k: usize) -> f64 {
        let k = k.min(self.rows.len()).max(1);
        self.rows[..k].iter().map(|r| r.1).sum::<f64>() / k as f64
    }

    /// Mean of the last `k` logged losses.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let k = k.min(self.rows.len()).max(1);
        self.rows[self.rows.len() - k..].iter().map(|r| r.1).sum::<f64>() / k as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (it, loss) in &self.rows {
            s.push_str(&format!("{it},{loss}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

enum Updater<T> {
    Adam(AdamState<T>),
    Sgd(f64),
}

/// Minibatch training on `data`. Batches are drawn from a seeded shuffle,
/// reshuffled each pass; every layer shares one learning rate.
pub fn train_loop<T: Real>(net: &mut Network<T>, data: &PatchSet<T>, cfg: &TrainConfig) -> Result<LossTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let first = &data.pairs[0].input;
    net.config().layer_sizes(first.height(), first.width())?;

    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut updater = match cfg.optimizer {
        OptimizerKind::Adam => Updater::Adam(AdamState::for_network(net, cfg.lr)),
        OptimizerKind::Sgd => Updater::Sgd(cfg.lr),
    };
    let mut trace = LossTrace::default();

    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data.pairs[order[cursor]]);
            cursor += 1;
        }
        let inputs: Vec<&Image<T>> = batch.iter().map(|p| &p.input).collect();
        let targets: Vec<&Image<T>> = batch.iter().map(|p| &p.target).collect();
        let x = Image::batch(&inputs)?;
        let y = Image::batch(&targets)?;

        let fwd = net.forward_trace(&x)?;
        let (loss, grad) = mse_loss(&fwd.output, &y)?;
        let grads = net.backward_from_trace(&fwd, &grad)?;
        let slices = grads.slices();
        match &mut updater {
            Updater::Adam(state) => adam_step(&mut net.params_mut(), &slices, state)?,
            Updater::Sgd(lr) => sgd_step(&mut net.params_mut(), &slices, *lr)?,
        }

        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Data(format!("loss diverged to {loss} at iteration {it}")));
        }
        if it % cfg.log_interval == 0 {
            trace.rows.push((it, loss));
        }
        if it % 500 == 0 {
            log::info!("iteration {it}: loss {loss:.6}");
        }
    }
    Ok(trace)
}
