//! Experiment configuration.
//!
//! Precedence, lowest first: built-in defaults, the TOML file, command-line
//! flags. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use lda_core::data::{synth_gaussian, ImbalanceProfile, LongTailDataset, SynthConfig};
use lda_core::metrics::SplitSpec;
use lda_core::optim::Schedule;
use lda_core::trainer::{ModelConfig, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset;
use crate::error::{ForgeError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Csv,
}

/// Where the data comes from. `csv` reads a directory written by
/// `synth` or laid out the same way; the generator keys apply to `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub header: bool,
    pub classes: usize,
    pub max_count: usize,
    pub ir: f64,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub test_per_class: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DataSource::Synth,
            path: None,
            header: true,
            classes: 10,
            max_count: 500,
            ir: 100.0,
            dim: 16,
            center_scale: 3.0,
            noise_sigma: 1.0,
            seed: 0,
            test_per_class: 32,
        }
    }
}

impl DatasetSection {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            profile: ImbalanceProfile {
                num_classes: self.classes,
                max_count: self.max_count,
                imbalance_ratio: self.ir,
            },
            dim: self.dim,
            center_scale: self.center_scale,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            test_per_class: self.test_per_class,
        }
    }

    pub fn load(&self) -> Result<LongTailDataset> {
        match self.source {
            DataSource::Synth => Ok(synth_gaussian(&self.synth_config())?),
            DataSource::Csv => {
                let dir = self
                    .path
                    .as_deref()
                    .ok_or_else(|| ForgeError::config("dataset.path is required for source = \"csv\""))?;
                if !dir.is_dir() {
                    return Err(ForgeError::config(format!("dataset directory not found: {}", dir.display())));
                }
                dataset::load_dir(dir, self.header)
            }
        }
    }
}

/// `[train]`: every training knob except the model shape and split
/// thresholds, which have their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub warmup_epochs: usize,
    pub gamma: f64,
    pub beta: f64,
    pub margin: f64,
    pub window: usize,
    pub fixed_alpha: f64,
    pub seed: u64,
    pub stage_split_epoch: Option<usize>,
    pub stage2_lr_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        (&TrainConfig::default()).into()
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(t: &TrainConfig) -> Self {
        TrainSection {
            strategy: t.strategy,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_base: t.lr_base,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            schedule: t.schedule.clone(),
            warmup_epochs: t.warmup_epochs,
            gamma: t.gamma,
            beta: t.beta,
            margin: t.margin,
            window: t.window,
            fixed_alpha: t.fixed_alpha,
            seed: t.seed,
            stage_split_epoch: t.stage_split_epoch,
            stage2_lr_factor: t.stage2_lr_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Parent of the run directories.
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub metrics: SplitSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            metrics: SplitSpec::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub fixed_alpha: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| ForgeError::Config(format!("{}: {}", origin.display(), e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ForgeError::config(format!("config file not found: {}", path.display())));
        }
        Self::from_toml(&fs::read_to_string(path).at(path)?, path)
    }

    /// Defaults, then `file` if given, then `flags`; validated.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = &o.data {
            self.dataset.source = DataSource::Csv;
            self.dataset.path = Some(v.clone());
        }
        let t = &mut self.train;
        if let Some(v) = o.strategy {
            t.strategy = v;
        }
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.seed {
            t.seed = v;
        }
        if let Some(v) = o.lr {
            t.lr_base = v;
        }
        if let Some(v) = o.gamma {
            t.gamma = v;
        }
        if let Some(v) = o.beta {
            t.beta = v;
        }
        if let Some(v) = o.fixed_alpha {
            t.fixed_alpha = v;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = self.train.clone();
        TrainConfig {
            strategy: t.strategy,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_base: t.lr_base,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            schedule: t.schedule,
            warmup_epochs: t.warmup_epochs,
            gamma: t.gamma,
            beta: t.beta,
            margin: t.margin,
            window: t.window,
            fixed_alpha: t.fixed_alpha,
            seed: t.seed,
            stage_split_epoch: t.stage_split_epoch,
            stage2_lr_factor: t.stage2_lr_factor,
            model: self.model.clone(),
            splits: self.metrics,
        }
    }

    /// Config with the training section replaced, as used by ablation cells.
    pub fn with_train(&self, t: &TrainConfig) -> Self {
        let mut out = self.clone();
        out.model = t.model.clone();
        out.metrics = t.splits;
        out.train = t.into();
        out
    }

    /// The frozen form written into every run directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the crate version and the frozen form, minus `out_dir`
    /// so moving the output tree does not change run identities.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION"));
        h.update(c.to_toml());
        hex::encode(h.finalize())
    }

    /// `<out_dir>/<strategy>-<first 12 hex digits of the hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir
            .join(format!("{}-{}", self.train.strategy, &self.hash()[..12]))
    }
}
