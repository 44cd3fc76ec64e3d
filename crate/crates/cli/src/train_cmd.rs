//! `train` subcommand: config in, populated run directory out.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use l0arm::data::derive_seed;
use l0arm::error::Result;
use l0arm::gates::GateFunction;
use l0arm::metrics::sparsity_report;
use l0arm::nn::presets::build_preset;
use l0arm::trainer::{init_gates, train};

use crate::config::RunConfig;

/// Sub-stream tags for the run seed; gate-sampling noise has its own
/// stream inside the trainer.
const WEIGHT_STREAM: u64 = 0x7765_6967_6874;
const GATE_INIT_STREAM: u64 = 0x6761_7465_5f69;

pub fn cmd_train(config_path: &Path) -> Result<PathBuf> {
    let config = RunConfig::load(config_path)?;
    let data = config.load_dataset()?;
    let run_dir = config.resolve_out_dir();
    std::fs::create_dir_all(&run_dir)?;

    // The resolved copy pins the concrete output directory so the run dir
    // re-parses as-is.
    let mut resolved = config.clone();
    resolved.out_dir = Some(run_dir.clone());
    let mut config_json = serde_json::to_string_pretty(&resolved)
        .map_err(|e| l0arm::Error::Format(format!("serializing config: {e}")))?;
    config_json.push('\n');
    std::fs::write(run_dir.join("config.json"), config_json)?;

    let gate = GateFunction::new(config.gate.family, config.gate.k)?;
    let mut weight_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, WEIGHT_STREAM));
    let mut net = build_preset::<f32, _>(config.preset, &mut weight_rng);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, GATE_INIT_STREAM));
    let mut bank = init_gates(&net, gate, &config.gate_init(), &mut init_rng)?;

    let reg = config.regularization(data.n_train());
    let outcome = train(
        config.preset,
        &mut net,
        &mut bank,
        &data,
        &config.train_config(),
        &reg,
        Some(&run_dir),
    )?;

    let report = sparsity_report(&net, &bank, config.tau)?;
    let mut report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| l0arm::Error::Format(format!("serializing report: {e}")))?;
    report_json.push('\n');
    std::fs::write(run_dir.join("report.json"), report_json)?;

    println!("run dir: {}", run_dir.display());
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {}: train_loss {} test_acc {} prune_rate {} exp_flops_fwd {}",
            last.epoch, last.train_loss, last.test_acc, last.prune_rate, last.exp_flops_fwd
        );
    }
    println!(
        "pruned architecture at tau {}: {} (prune rate {})",
        config.tau,
        report.arch_string(),
        report.prune_rate
    );
    Ok(run_dir)
}
