//! Training orchestration: gate initialization, learning-rate schedules,
//! the epoch loop, and per-epoch metric logging.
//!
//! One trainer owns one run. Every mini-batch goes through the stochastic
//! objective once, the optimizer updates weights, biases, and gate
//! parameters together under a shared learning rate, and each epoch ends
//! with an evaluation pass under the thresholded deployment mask. Metrics
//! stream to disk as the run progresses so an interrupted run still leaves
//! a usable log.

pub mod optim;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save, Checkpoint, TrainerState};
use crate::data::{batches, derive_seed, Dataset, Split};
use crate::error::{Error, Result};
use crate::gates::{GateBank, GateFunction, PROB_FLOOR};
use crate::metrics::{
    expected_flops, gate_histogram, masked_accuracy, prune_rate, threshold_mask,
};
use crate::nn::loss::LossKind;
use crate::nn::presets::Preset;
use crate::nn::{GatedNetwork, MaskAssignment};
use crate::objective::{objective_step, Estimator, RegularizationSpec, StepOutput};
use crate::scalar::Scalar;
use optim::{OptState, OptimizerSpec};

/// Threshold used for the per-epoch prune-rate and accuracy columns.
pub const LOG_TAU: f64 = 0.5;
/// Largest batch used for evaluation passes.
const EVAL_CHUNK: usize = 1000;
/// Sub-stream tag for the trainer's gate-sampling noise.
const GATE_NOISE_STREAM: u64 = 0x6761_7465_73;

// --- configuration ----------------------------------------------------------

/// Learning-rate decay applied on epoch boundaries (epochs are 0-based
/// here, so the first `epochs` epochs of `halve_every(epochs)` run at the
/// base rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Multiply the rate by 0.5 after every `epochs` completed epochs.
    HalveEvery { epochs: usize },
    /// Multiply the rate by `factor` at each milestone epoch.
    Multistep { milestones: Vec<usize>, factor: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::HalveEvery { epochs } if *epochs == 0 => Err(Error::Domain(
                "halve_every period must be at least 1 epoch".into(),
            )),
            Schedule::Multistep { factor, .. } if !(factor.is_finite() && *factor > 0.0) => Err(
                Error::Domain(format!("multistep factor must be positive, got {factor}")),
            ),
            _ => Ok(()),
        }
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            Schedule::HalveEvery { epochs } => base * 0.5f64.powi((epoch / epochs) as i32),
            Schedule::Multistep { milestones, factor } => {
                let hits = milestones.iter().filter(|&&m| m <= epoch).count();
                base * factor.powi(hits as i32)
            }
        }
    }
}

/// Per-layer gate initialization: activation probabilities are drawn from
/// normal(mean, variance), clamped away from 0 and 1, and mapped through
/// the gate inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateInit {
    pub mean: f64,
    pub variance: f64,
}

impl GateInit {
    pub fn new(mean: f64, variance: f64) -> Self {
        GateInit { mean, variance }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean > 0.0 && self.mean < 1.0) {
            return Err(Error::Domain(format!(
                "gate init mean must lie strictly inside (0, 1), got {}",
                self.mean
            )));
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(Error::Domain(format!(
                "gate init variance must be finite and non-negative, got {}",
                self.variance
            )));
        }
        Ok(())
    }
}

/// Per-preset default gate initialization: input-layer gates start mostly
/// active on the MLP, everything else starts at even odds.
pub fn default_gate_init(preset: Preset) -> Vec<GateInit> {
    match preset {
        Preset::Mlp784_300_100 => vec![
            GateInit::new(0.8, 0.01),
            GateInit::new(0.5, 0.01),
            GateInit::new(0.5, 0.01),
        ],
        Preset::Lenet5Caffe => vec![GateInit::new(0.5, 0.01); 4],
        Preset::ToyDense => vec![GateInit::new(0.8, 0.01), GateInit::new(0.5, 0.01)],
    }
}

/// Everything one training run needs besides the model and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerSpec,
    /// No schedule means a constant learning rate.
    #[serde(default)]
    pub schedule: Option<Schedule>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub estimator: Estimator,
    /// One entry per gated layer, in network order.
    pub gate_init: Vec<GateInit>,
    /// Write an intermediate checkpoint every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if let Some(schedule) = &self.schedule {
            schedule.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Domain(
                "checkpoint cadence must be at least 1 epoch".into(),
            ));
        }
        for init in &self.gate_init {
            init.validate()?;
        }
        Ok(())
    }
}

// --- gate initialization ----------------------------------------------------

/// Draw initial gate parameters. Each layer's activation probabilities come
/// from its normal spec; a zero-variance spec is exact, not sampled.
pub fn init_gates<F: Scalar, R: Rng + ?Sized>(
    net: &GatedNetwork<F>,
    gate: GateFunction,
    spec: &[GateInit],
    rng: &mut R,
) -> Result<GateBank> {
    let counts = net.gate_counts();
    if spec.len() != counts.len() {
        return Err(Error::Contract(format!(
            "{} gate init entries for {} gated layers",
            spec.len(),
            counts.len()
        )));
    }
    let mut bank = GateBank::new(gate, counts)?;
    let mut phi = Vec::with_capacity(bank.len());
    for (init, &count) in spec.iter().zip(counts) {
        init.validate()?;
        let normal = Normal::new(init.mean, init.variance.sqrt())
            .map_err(|e| Error::Domain(format!("gate init distribution: {e}")))?;
        for _ in 0..count {
            let pi = if init.variance == 0.0 {
                init.mean
            } else {
                normal.sample(rng)
            };
            let pi = pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            phi.push(bank.gate().invert(pi)?);
        }
    }
    bank.set_phi(&phi)?;
    Ok(bank)
}

// --- metrics log ------------------------------------------------------------

/// Header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,train_loss,test_acc,prune_rate,exp_flops_fwd,l0_term,fwd_passes";

/// One row of the metrics log plus that epoch's gate histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: u64,
    /// Mean data loss over the epoch's optimizer steps.
    pub train_loss: f64,
    /// Test accuracy under the thresholded mask at [`LOG_TAU`].
    pub test_acc: f64,
    /// Weight prune rate under the thresholded mask at [`LOG_TAU`].
    pub prune_rate: f64,
    /// Expected forward FLOPs under the current activation probabilities.
    pub exp_flops_fwd: f64,
    /// Mean active-weight penalty term over the epoch's optimizer steps.
    pub l0_term: f64,
    /// Cumulative training forward passes since the start of the run.
    pub fwd_passes: u64,
    /// 50-bin histogram of gate probabilities over [0, 1].
    pub histogram: Vec<u64>,
}

impl EpochLog {
    /// Format the row exactly as it appears in the metrics CSV.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.test_acc,
            self.prune_rate,
            self.exp_flops_fwd,
            self.l0_term,
            self.fwd_passes
        )
    }
}

/// A finished (or aborted-at-epoch-boundary) training run.
#[derive(Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub checkpoint: Checkpoint<F>,
    pub log: Vec<EpochLog>,
}

// --- evaluation -------------------------------------------------------------

/// Accuracy over a whole split under a fixed mask, evaluated in bounded
/// chunks.
pub fn evaluate<F: Scalar>(
    net: &GatedNetwork<F>,
    split: &Split<F>,
    mask: &MaskAssignment,
) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0usize;
    for (batch, targets) in batches(split, EVAL_CHUNK, 0, 0)? {
        let acc = masked_accuracy(net, &batch, &targets, mask)?;
        weighted += acc * targets.len() as f64;
        total += targets.len();
    }
    Ok(weighted / total as f64)
}

// --- run output files -------------------------------------------------------

struct RunWriter {
    metrics: std::fs::File,
    histograms: std::fs::File,
    checkpoint_dir: PathBuf,
}

impl RunWriter {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let checkpoint_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&checkpoint_dir)?;
        let mut metrics = std::fs::File::create(dir.join("metrics.csv"))?;
        writeln!(metrics, "{METRICS_HEADER}")?;
        let histograms = std::fs::File::create(dir.join("histograms.jsonl"))?;
        Ok(RunWriter {
            metrics,
            histograms,
            checkpoint_dir,
        })
    }

    fn append(&mut self, row: &EpochLog) -> Result<()> {
        writeln!(self.metrics, "{}", row.csv_row())?;
        let line = serde_json::json!({ "epoch": row.epoch, "bins": row.histogram });
        writeln!(self.histograms, "{line}")?;
        self.metrics.flush()?;
        self.histograms.flush()?;
        Ok(())
    }

    fn checkpoint_path(&self, epoch: u64) -> PathBuf {
        self.checkpoint_dir.join(format!("epoch_{epoch:04}.ckpt"))
    }
}

// --- training loop ----------------------------------------------------------

/// Run the full training loop.
///
/// The network and gate bank are updated in place; the returned checkpoint
/// holds a snapshot of the final state including optimizer moments. When
/// `out_dir` is given, `metrics.csv`, `histograms.jsonl`, and checkpoint
/// files stream into it as the run progresses. A non-finite objective
/// aborts the run with a diagnostic dump rather than continuing.
pub fn train<F: Scalar>(
    preset: Preset,
    net: &mut GatedNetwork<F>,
    bank: &mut GateBank,
    data: &Dataset<F>,
    config: &TrainConfig,
    reg: &RegularizationSpec,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    reg.validate(bank.num_layers())?;

    let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    let mut theta_state = OptState::<F>::new(&config.optimizer, &sizes);
    let mut phi_state = OptState::<f64>::new(&config.optimizer, &[bank.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, GATE_NOISE_STREAM));
    let mut writer = match out_dir {
        Some(dir) => Some(RunWriter::create(dir)?),
        None => None,
    };

    let base_lr = config.optimizer.base_lr();
    let mut log = Vec::with_capacity(config.epochs);
    let mut fwd_passes = 0u64;
    let mut global_step = 0u64;

    for epoch in 0..config.epochs {
        let lr = match &config.schedule {
            Some(schedule) => schedule.lr_at(base_lr, epoch),
            None => base_lr,
        };

        let mut loss_sum = 0.0;
        let mut l0_sum = 0.0;
        let mut steps = 0u64;
        for (batch, targets) in batches(&data.train, config.batch_size, config.seed, epoch as u64)?
        {
            let result = objective_step(
                net,
                bank,
                &batch,
                &targets,
                reg,
                config.estimator,
                LossKind::CrossEntropy,
                &mut rng,
                global_step,
            );
            let step = match result {
                Ok(step) if step.objective.is_finite() => step,
                Ok(step) => {
                    if let Some(dir) = out_dir {
                        dump_divergence(dir, epoch + 1, steps, step.objective, Some(&step), bank);
                    }
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        step: steps as usize,
                        value: step.objective,
                    });
                }
                Err(Error::Diverged { value, .. }) => {
                    if let Some(dir) = out_dir {
                        dump_divergence(dir, epoch + 1, steps, value, None::<&StepOutput<F>>, bank);
                    }
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        step: steps as usize,
                        value,
                    });
                }
                Err(e) => return Err(e),
            };
            loss_sum += step.data_loss;
            l0_sum += step.l0_term;
            fwd_passes += step.forward_passes as u64;
            steps += 1;
            global_step += 1;

            let grads = step.grad_params.slices();
            let mut params = net.param_slices_mut();
            theta_state.step(&config.optimizer, lr, &mut params, &grads)?;
            phi_state.step(
                &config.optimizer,
                lr,
                &mut [bank.phi_mut()],
                &[&step.grad_phi],
            )?;
        }

        let row = epoch_row(
            net,
            bank,
            data,
            (epoch + 1) as u64,
            loss_sum / steps as f64,
            l0_sum / steps as f64,
            fwd_passes,
        )?;
        if let Some(writer) = &mut writer {
            writer.append(&row)?;
            if config
                .checkpoint_every
                .is_some_and(|every| (epoch + 1) % every == 0)
            {
                let snapshot = snapshot(
                    preset,
                    net,
                    bank,
                    config,
                    &theta_state,
                    &phi_state,
                    row.epoch,
                );
                save(&snapshot, &writer.checkpoint_path(row.epoch))?;
            }
        }
        log.push(row);
    }

    let checkpoint = snapshot(
        preset,
        net,
        bank,
        config,
        &theta_state,
        &phi_state,
        config.epochs as u64,
    );
    if let Some(writer) = &writer {
        save(&checkpoint, &writer.checkpoint_dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

fn snapshot<F: Scalar>(
    preset: Preset,
    net: &GatedNetwork<F>,
    bank: &GateBank,
    config: &TrainConfig,
    theta: &OptState<F>,
    phi: &OptState<f64>,
    epoch: u64,
) -> Checkpoint<F> {
    Checkpoint {
        preset,
        net: net.clone(),
        bank: bank.clone(),
        seed: config.seed,
        epoch,
        state: Some(TrainerState {
            spec: config.optimizer.clone(),
            theta: theta.clone(),
            phi: phi.clone(),
        }),
    }
}

fn epoch_row<F: Scalar>(
    net: &GatedNetwork<F>,
    bank: &GateBank,
    data: &Dataset<F>,
    epoch: u64,
    train_loss: f64,
    l0_term: f64,
    fwd_passes: u64,
) -> Result<EpochLog> {
    let thresholded = threshold_mask(bank, LOG_TAU)?;
    let probs = MaskAssignment::from_values(&bank.expectation_mask(), bank)?;
    Ok(EpochLog {
        epoch,
        train_loss,
        test_acc: evaluate(net, &data.test, &thresholded)?,
        prune_rate: prune_rate(net, &thresholded)?,
        exp_flops_fwd: expected_flops(net, &probs)?,
        l0_term,
        fwd_passes,
        histogram: gate_histogram(bank),
    })
}

fn dump_divergence<F: Scalar>(
    dir: &Path,
    epoch: usize,
    step: u64,
    objective: f64,
    detail: Option<&StepOutput<F>>,
    bank: &GateBank,
) {
    let phi = bank.phi();
    let probs = bank.expectation_mask();
    let dump = serde_json::json!({
        "epoch": epoch,
        "step": step,
        "objective": objective,
        "data_loss": detail.map(|d| d.data_loss),
        "l0_term": detail.map(|d| d.l0_term),
        "phi_min": phi.iter().cloned().fold(f64::INFINITY, f64::min),
        "phi_max": phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "prob_min": probs.iter().cloned().fold(f64::INFINITY, f64::min),
        "prob_max": probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    });
    // Best-effort: the abort error must surface even if the dump cannot be
    // written.
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(
        dir.join("diverged.json"),
        serde_json::to_vec_pretty(&dump).unwrap_or_default(),
    );
}

// ---------------------------------------------------------------------------
