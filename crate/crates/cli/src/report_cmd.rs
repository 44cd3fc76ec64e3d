//! `report` subcommand: consolidate finished run directories into plain
//! tables and plot-ready CSV.

use std::path::{Path, PathBuf};

use l0arm::error::{Error, Result};
use l0arm::metrics::SparsityReport;

/// Parsed leftovers of one run directory.
struct RunSummary {
    name: String,
    arch: String,
    prune_rate: f64,
    test_acc: f64,
    /// `(epoch, exp_flops_fwd)` series from the metrics log.
    flops_series: Vec<(u64, f64)>,
    final_fwd_passes: u64,
}

pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Domain("report needs at least one run directory".into()));
    }
    let mut summaries = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        summaries.push(read_run(dir)?);
    }

    // Table-style summary: architecture | prune % | accuracy %.
    for s in &summaries {
        println!(
            "{}: {} | {:.2} | {:.2}",
            s.name,
            s.arch,
            100.0 * s.prune_rate,
            100.0 * s.test_acc
        );
    }

    // Forward-pass economy of the first run relative to the second.
    if let [a, b] = &summaries[..] {
        println!(
            "fwd_pass_ratio: {}",
            a.final_fwd_passes as f64 / b.final_fwd_passes as f64
        );
    }

    // Plot-ready series.
    println!("run,epoch,exp_flops_fwd");
    for s in &summaries {
        for (epoch, flops) in &s.flops_series {
            println!("{},{epoch},{flops}", s.name);
        }
    }
    Ok(())
}

fn read_run(dir: &Path) -> Result<RunSummary> {
    let incomplete = |what: &str| {
        Error::Format(format!(
            "run directory {} is incomplete: missing {what}",
            dir.display()
        ))
    };
    let metrics_path = dir.join("metrics.csv");
    let metrics =
        std::fs::read_to_string(&metrics_path).map_err(|_| incomplete("metrics.csv"))?;
    let report_text =
        std::fs::read_to_string(dir.join("report.json")).map_err(|_| incomplete("report.json"))?;
    let report: SparsityReport = serde_json::from_str(&report_text)
        .map_err(|e| Error::Format(format!("{}: report.json: {e}", dir.display())))?;

    let mut lines = metrics.lines();
    let header = lines.next().ok_or_else(|| incomplete("metrics.csv header"))?;
    let columns: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Format(format!("{}: no {name} column", metrics_path.display())))
    };
    let (epoch_col, acc_col, flops_col, fwd_col) = (
        col("epoch")?,
        col("test_acc")?,
        col("exp_flops_fwd")?,
        col("fwd_passes")?,
    );

    let mut flops_series = Vec::new();
    let mut last: Option<(f64, u64)> = None;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| {
                    Error::Format(format!("{}: malformed row {line:?}", metrics_path.display()))
                })
        };
        let epoch = parse(epoch_col)? as u64;
        flops_series.push((epoch, parse(flops_col)?));
        last = Some((parse(acc_col)?, parse(fwd_col)? as u64));
    }
    let (test_acc, final_fwd_passes) =
        last.ok_or_else(|| incomplete("metrics.csv rows (no epochs logged)"))?;

    Ok(RunSummary {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        arch: report.arch_string(),
        prune_rate: report.prune_rate,
        test_acc,
        flops_series,
        final_fwd_passes,
    })
}
