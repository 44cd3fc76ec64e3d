//! Run configuration: a single JSON file that fully reproduces a run.
//!
//! Unknown keys are hard errors and serialization is lossless, so a config
//! written back from a parsed run (`config.json` in the run directory) can
//! be re-parsed into the identical structure.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use l0arm::data::{make_synthetic, mnist_dataset, pad_features, Dataset, InputLayout, SyntheticKind};
use l0arm::error::{Error, Result};
use l0arm::gates::{GateFamily, DEFAULT_SHARPNESS};
use l0arm::nn::presets::Preset;
use l0arm::objective::{Estimator, LambdaSpec, RegularizationSpec};
use l0arm::trainer::optim::OptimizerSpec;
use l0arm::trainer::{GateInit, Schedule, TrainConfig};

// --- schema -----------------------------------------------------------------

/// Where the training and test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX files with canonical names inside `dir`.
    Mnist {
        dir: PathBuf,
        /// Truncate the training split to its first this-many samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_subset: Option<usize>,
    },
    /// Generated in memory; hermetic and seed-stable.
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        #[serde(default = "default_jitter")]
        jitter: f64,
        /// Zero-pad the two generated features up to this input width.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pad_features: Option<usize>,
    },
}

fn default_jitter() -> f64 {
    0.1
}

/// Gate function and per-layer initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub family: GateFamily,
    #[serde(default = "default_sharpness")]
    pub k: f64,
    /// One entry per gated layer; omitted means the preset's defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<GateInit>>,
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub data: DataConfig,
    pub estimator: Estimator,
    pub gate: GateConfig,
    /// Active-weight penalty before division by the training-set size;
    /// a scalar or one coefficient per gated layer.
    pub lambda_scaled: LambdaSpec,
    #[serde(default)]
    pub lambda_l1: f64,
    #[serde(default)]
    pub lambda_l2: f64,
    /// Weight each gate's penalty by its group size.
    #[serde(default = "default_true")]
    pub group_weighted: bool,
    pub optimizer: OptimizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Deployment threshold for the final report.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    /// Run directory; omitted means `$L0ARM_OUT_ROOT/<preset>_<estimator>_s<seed>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

fn default_tau() -> f64 {
    0.5
}

// --- loading and validation -------------------------------------------------

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if let Some(schedule) = &self.schedule {
            schedule.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Domain(format!(
                "tau must lie strictly inside (0, 1), got {}",
                self.tau
            )));
        }
        for field in [("lambda_l1", self.lambda_l1), ("lambda_l2", self.lambda_l2)] {
            if !(field.1.is_finite() && field.1 >= 0.0) {
                return Err(Error::Domain(format!(
                    "{} must be finite and non-negative, got {}",
                    field.0, field.1
                )));
            }
        }
        if let Some(init) = &self.gate.init {
            for entry in init {
                entry.validate()?;
            }
        }
        if matches!(self.data, DataConfig::Synthetic { .. })
            && self.preset == Preset::Lenet5Caffe
        {
            return Err(Error::Domain(
                "synthetic data is flat; the lenet5_caffe preset needs spatial input".into(),
            ));
        }
        Ok(())
    }

    /// The run directory this config writes into.
    pub fn resolve_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        let root = std::env::var_os("L0ARM_OUT_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!(
            "{}_{}_s{}",
            self.preset.name(),
            self.estimator.name(),
            self.seed
        ))
    }

    /// Gate initialization: explicit entries or the preset's defaults.
    pub fn gate_init(&self) -> Vec<GateInit> {
        self.gate
            .init
            .clone()
            .unwrap_or_else(|| l0arm::trainer::default_gate_init(self.preset))
    }

    /// Penalty coefficients with `lambda_scaled` divided by the actual
    /// training-set size.
    pub fn regularization(&self, n_train: usize) -> RegularizationSpec {
        let n = n_train as f64;
        let lambda_l0 = match &self.lambda_scaled {
            LambdaSpec::Global(x) => LambdaSpec::Global(x / n),
            LambdaSpec::PerLayer(xs) => LambdaSpec::PerLayer(xs.iter().map(|x| x / n).collect()),
        };
        RegularizationSpec {
            lambda_l0,
            lambda_l1: self.lambda_l1,
            lambda_l2: self.lambda_l2,
            group_weighted: self.group_weighted,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer.clone(),
            schedule: self.schedule.clone(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            estimator: self.estimator,
            gate_init: self.gate_init(),
            checkpoint_every: self.checkpoint_every,
        }
    }

    /// Load the dataset this config describes, already shaped for the
    /// preset's input layer.
    pub fn load_dataset(&self) -> Result<Dataset<f32>> {
        let layout = match self.preset {
            Preset::Lenet5Caffe => InputLayout::Spatial,
            _ => InputLayout::Flat,
        };
        match &self.data {
            DataConfig::Mnist { dir, train_subset } => mnist_dataset(dir, layout, *train_subset)
                .map_err(|e| Error::Format(format!("data.mnist.dir = {}: {e}", dir.display()))),
            DataConfig::Synthetic {
                kind,
                n,
                jitter,
                pad_features: pad,
            } => {
                let data = make_synthetic::<f32>(*kind, *n, self.seed, *jitter)?;
                match pad {
                    Some(width) => pad_features(&data, *width),
                    None => Ok(data),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
