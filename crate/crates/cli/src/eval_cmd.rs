//! `eval` subcommand: load a checkpoint, score it under the thresholded
//! deployment mask, and print sparsity reports.

use std::path::PathBuf;

use l0arm::checkpoint::load;
use l0arm::error::{Error, Result};
use l0arm::metrics::{sparsity_report, threshold_mask};
use l0arm::trainer::evaluate;

use crate::config::RunConfig;

pub struct EvalArgs {
    /// Run directory holding `config.json` and `checkpoints/final.ckpt`.
    pub run_dir: Option<PathBuf>,
    /// Explicit checkpoint path; overrides the run-dir default.
    pub checkpoint: Option<PathBuf>,
    /// Explicit config path; overrides the run-dir default.
    pub config: Option<PathBuf>,
    /// Threshold; defaults to the config's `tau`.
    pub tau: Option<f64>,
    /// Extra thresholds: one report per value.
    pub sweep: Vec<f64>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config_path = resolve(args, "config.json", &args.config)?;
    let checkpoint_path = resolve(
        args,
        "checkpoints/final.ckpt",
        &args.checkpoint,
    )?;

    let config = RunConfig::load(&config_path)?;
    let data = config.load_dataset()?;
    let ckpt = load::<f32>(&checkpoint_path)?;
    if ckpt.preset != config.preset {
        return Err(Error::Contract(format!(
            "checkpoint preset {} does not match config preset {}",
            ckpt.preset.name(),
            config.preset.name()
        )));
    }

    let tau = args.tau.unwrap_or(config.tau);
    for &t in std::iter::once(&tau).chain(&args.sweep) {
        let mask = threshold_mask(&ckpt.bank, t)?;
        let acc = evaluate(&ckpt.net, &data.test, &mask)?;
        let report = sparsity_report(&ckpt.net, &ckpt.bank, t)?;
        println!("tau {t}: test_acc {acc}");
        let line = serde_json::json!({
            "tau": t,
            "test_acc": acc,
            "pruned_arch": report.arch_string(),
            "prune_rate": report.prune_rate,
            "exp_flops_fwd": report.exp_flops_fwd,
        });
        println!("{line}");
    }
    Ok(())
}

fn resolve(args: &EvalArgs, default_name: &str, explicit: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(path) = explicit {
        return Ok(path.clone());
    }
    match &args.run_dir {
        Some(dir) => Ok(dir.join(default_name)),
        None => Err(Error::Domain(format!(
            "need --run-dir or an explicit path for {default_name}"
        ))),
    }
}
