use std::fs;
use std::path::{Path, PathBuf};

use rednet::data::{list_images, load_image, make_dataset, save_image, PatchSet, SourceImage};
use rednet::infer::{restore, restore_ensemble};
use rednet::metrics::{evaluate, MetricReport};
use rednet::optim::{train_loop, LossTrace, TrainConfig};
use rednet::rng::{derive_seed, seeded};
use rednet::{Error, RedNet, RedNetConfig};

use crate::ablation;
use crate::config::{required, DataSection, RunConfig};
use crate::CliError;

/// Seed streams split off the run seed.
const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

/// Loads every image in `dir`, identified by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<SourceImage<f32>>, CliError> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("image directory {} does not exist", dir.display())).into());
    }
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("no images found in {}", dir.display())).into());
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(SourceImage::new(id, load_image(p)?))
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::io(dir, e)))
        }
        _ => Ok(()),
    }
}

fn build_dataset(data: &DataSection, patch: usize, seed: u64) -> Result<PatchSet<f32>, CliError> {
    let images = load_dir(&data.train_dir)?;
    Ok(make_dataset(
        &images,
        &data.corruption,
        patch,
        data.count,
        &mut seeded(derive_seed(seed, DATA_STREAM)),
    )?)
}

fn train_one(model: &RedNetConfig, train: &TrainConfig, set: &PatchSet<f32>) -> Result<(RedNet, LossTrace), CliError> {
    let mut net = RedNet::build(model.clone(), derive_seed(train.seed, INIT_STREAM))?;
    let trace = train_loop(&mut net, set, train)?;
    Ok((net, trace))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_loss: f64,
    pub iterations: usize,
}

pub fn train(cfg: &RunConfig, seed: Option<u64>) -> Result<TrainOutcome, CliError> {
    let data = cfg.data()?;
    let ckpt = required(&cfg.output.checkpoint, "checkpoint")?;
    let loss_csv = required(&cfg.output.loss_csv, "loss_csv")?;
    let mut train = cfg.train.clone();
    if let Some(s) = seed {
        train.seed = s;
    }
    cfg.model.layer_sizes(data.patch_size, data.patch_size)?;
    for p in [Some(ckpt), Some(loss_csv), cfg.output.manifest.as_deref()].into_iter().flatten() {
        ensure_parent(p)?;
    }

    let set = build_dataset(data, data.patch_size, train.seed)?;
    if let Some(m) = &cfg.output.manifest {
        fs::write(m, set.manifest_json()).map_err(|e| CliError::Core(Error::io(m, e)))?;
    }
    let (net, trace) = train_one(&cfg.model, &train, &set)?;
    net.save(ckpt)?;
    trace.write_csv(loss_csv)?;
    let final_loss = trace.rows.last().map_or(f64::NAN, |r| r.1);
    Ok(TrainOutcome {
        final_loss,
        iterations: train.iterations,
    })
}

pub fn restore_file(ckpt: &Path, input: &Path, output: &Path, ensemble: bool) -> Result<(), CliError> {
    let net = RedNet::load(ckpt)?;
    let img = load_image::<f32>(input)?;
    let out = if ensemble { restore_ensemble(&net, &img)? } else { restore(&net, &img)? };
    ensure_parent(output)?;
    save_image(&out, output)?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct EvalOptions {
    pub seed: Option<u64>,
    pub ensemble: bool,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn eval(ckpt: &Path, cfg: &RunConfig, opts: &EvalOptions) -> Result<MetricReport, CliError> {
    let section = cfg.eval()?;
    let dir = opts.input.as_deref().unwrap_or(&section.test_dir);
    let out = opts.output.as_deref().or(cfg.output.metrics_csv.as_deref());
    if let Some(p) = out {
        ensure_parent(p)?;
    }
    let net = RedNet::load(ckpt)?;
    let images = load_dir(dir)?;
    let report = evaluate(
        &net,
        &images,
        &section.corruption,
        opts.seed.unwrap_or(section.seed),
        opts.ensemble || section.ensemble,
    )?;
    if let Some(p) = out {
        report.write_csv(p)?;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct AblationResult {
    pub name: String,
    pub csv: PathBuf,
    pub trace: LossTrace,
}

/// Trains every run of `variant` on one shared patch set and writes
/// `<ablation_dir>/<run>.csv` for each.
pub fn ablate(variant: &str, cfg: &RunConfig, seed: Option<u64>) -> Result<Vec<AblationResult>, CliError> {
    let plan = ablation::plan(variant, &cfg.model)?;
    let data = cfg.data()?;
    let dir = required(&cfg.output.ablation_dir, "ablation_dir")?;
    let mut train = cfg.train.clone();
    if let Some(s) = seed {
        train.seed = s;
    }
    let patch = plan.patch_size.unwrap_or(data.patch_size);
    for run in &plan.runs {
        run.model.layer_sizes(patch, patch)?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::io(dir, e)))?;

    let set = build_dataset(data, patch, train.seed)?;
    let mut results = Vec::with_capacity(plan.runs.len());
    for run in plan.runs {
        log::info!("ablation run {}", run.name);
        let (_, trace) = train_one(&run.model, &train, &set)?;
        let csv = dir.join(format!("{}.csv", run.name));
        trace.write_csv(&csv)?;
        results.push(AblationResult {
            name: run.name,
            csv,
            trace,
        });
    }
    Ok(results)
}
