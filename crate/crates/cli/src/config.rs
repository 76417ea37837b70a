//! JSON run configuration. Unknown keys anywhere are rejected, and relative
//! paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use rednet::data::CorruptionSpec;
use rednet::optim::TrainConfig;
use rednet::RedNetConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_patch() -> usize {
    32
}
fn default_count() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_dir: PathBuf,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    /// Number of training pairs to sample.
    #[serde(default = "default_count")]
    pub count: usize,
    pub corruption: CorruptionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub test_dir: PathBuf,
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub ensemble: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    /// JSON provenance record of every training pair.
    pub manifest: Option<PathBuf>,
    /// Directory receiving one loss CSV per ablation run.
    pub ablation_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: RedNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: Option<DataSection>,
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Reads, parses and validates `path`, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.train_dir);
        }
        if let Some(e) = &mut self.eval {
            fix(&mut e.test_dir);
        }
        let o = &mut self.output;
        for p in [
            &mut o.checkpoint,
            &mut o.loss_csv,
            &mut o.metrics_csv,
            &mut o.manifest,
            &mut o.ablation_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(d) = &self.data {
            d.corruption.validate()?;
            if d.patch_size == 0 || d.count == 0 {
                return Err(CliError::Usage("data.patch_size and data.count must be >= 1".into()));
            }
        }
        if let Some(e) = &self.eval {
            e.corruption.validate()?;
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataSection, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Usage("config has no `data` section".into()))
    }

    pub fn eval(&self) -> Result<&EvalSection, CliError> {
        self.eval
            .as_ref()
            .ok_or_else(|| CliError::Usage("config has no `eval` section".into()))
    }
}

/// `path`, or a usage error naming the missing `output.<field>`.
pub fn required<'a>(path: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("config is missing `output.{field}`")))
}
