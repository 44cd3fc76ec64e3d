//! Sparsity and cost reporting: thresholded gate masks, pruned
//! architecture extraction, prune rate, and expected forward FLOPs.
//!
//! All quantities are derived from a walk over the network's layer chain
//! that tracks per-unit (or per-channel) activity. Activity is the gate
//! probability during training-time reporting and a 0/1 indicator for
//! deployment-style prune counts; the walk itself is the same.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateBank;
use crate::nn::{Batch, GatedNetwork, Layer, MaskAssignment, TensorShape};
use crate::objective::Estimator;
use crate::scalar::Scalar;

/// Number of equal-width histogram bins over the probability range [0, 1].
pub const HISTOGRAM_BINS: usize = 50;

// --- thresholding -----------------------------------------------------------

/// Deterministic deployment mask: gates at or below `tau` are zeroed, the
/// rest keep their probability g(phi) as a real-valued scale.
pub fn threshold_mask(bank: &GateBank, tau: f64) -> Result<MaskAssignment> {
    check_tau(tau)?;
    let values: Vec<f64> = bank
        .expectation_mask()
        .into_iter()
        .map(|g| if g <= tau { 0.0 } else { g })
        .collect();
    MaskAssignment::from_values(&values, bank)
}

/// Active group counts per gated layer: how many gates sit strictly above
/// `tau`.
pub fn pruned_architecture(bank: &GateBank, tau: f64) -> Result<Vec<usize>> {
    check_tau(tau)?;
    let probs = bank.expectation_mask();
    let mut counts = Vec::with_capacity(bank.num_layers());
    for l in 0..bank.num_layers() {
        let range = bank.layer_range(l);
        counts.push(probs[range].iter().filter(|&&g| g > tau).count());
    }
    Ok(counts)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!(
            "threshold must lie strictly inside (0, 1), got {tau}"
        )));
    }
    Ok(())
}

// --- activity walk ----------------------------------------------------------

/// One dense or conv layer's cost factors, with activity sums taken at the
/// layer's input and output interfaces.
struct ProducerCost {
    /// Weights per (input, output) pair: kernel size squared for conv, 1
    /// for dense.
    kernel: f64,
    /// Activity sum over the input interface.
    e_in: f64,
    /// Activity sum over the output interface (resolved later).
    e_out: f64,
    /// Output spatial positions (1 for dense).
    out_elems: f64,
}

/// Costs of every weight-bearing layer plus pooling work, under a given
/// per-gate activity assignment.
struct WalkSummary {
    producers: Vec<ProducerCost>,
    /// Expected pooling operations (one per surviving output element).
    pool_ops: f64,
}

/// Walk the layer chain, scaling activity by the mask at each gate layer.
///
/// A producer's output activity is snapshotted when the representation it
/// produced ends: at the next dense/conv layer, at a flatten, or at the end
/// of the network. Gates applied after a flatten therefore count toward the
/// following dense layer's input, not the conv's channel count.
fn activity_walk<F: Scalar>(net: &GatedNetwork<F>, masks: &MaskAssignment) -> Result<WalkSummary> {
    masks.check_against(net)?;

    let mut activity: Vec<f64> = match net.input_shape() {
        TensorShape::Flat(n) => vec![1.0; n],
        TensorShape::Chw(c, _, _) => vec![1.0; c],
    };
    let mut spatial = match net.input_shape() {
        TensorShape::Flat(_) => None,
        TensorShape::Chw(_, h, w) => Some((h, w)),
    };

    let mut producers: Vec<ProducerCost> = Vec::new();
    let mut pending: Option<usize> = None; // index into producers
    let mut pool_ops = 0.0;
    let mut gate_idx = 0usize;

    let finalize = |pending: &mut Option<usize>, producers: &mut Vec<ProducerCost>, activity: &[f64]| {
        if let Some(i) = pending.take() {
            producers[i].e_out = activity.iter().sum();
        }
    };

    for layer in net.layers() {
        match layer {
            Layer::Dense { weight, .. } => {
                finalize(&mut pending, &mut producers, &activity);
                producers.push(ProducerCost {
                    kernel: 1.0,
                    e_in: activity.iter().sum(),
                    e_out: 0.0,
                    out_elems: 1.0,
                });
                pending = Some(producers.len() - 1);
                activity = vec![1.0; weight.ncols()];
            }
            Layer::Conv2d { weight, .. } => {
                finalize(&mut pending, &mut producers, &activity);
                let (co, _, kh, kw) = weight.dim();
                let (h, w) = spatial.expect("validated: conv input is spatial");
                let (ho, wo) = (h - kh + 1, w - kw + 1);
                producers.push(ProducerCost {
                    kernel: (kh * kw) as f64,
                    e_in: activity.iter().sum(),
                    e_out: 0.0,
                    out_elems: (ho * wo) as f64,
                });
                pending = Some(producers.len() - 1);
                activity = vec![1.0; co];
                spatial = Some((ho, wo));
            }
            Layer::MaxPool2d { size } => {
                let (h, w) = spatial.expect("validated: pool input is spatial");
                let (ho, wo) = (h / size, w / size);
                pool_ops += activity.iter().sum::<f64>() * (ho * wo) as f64;
                spatial = Some((ho, wo));
            }
            Layer::Relu => {}
            Layer::Flatten => {
                // The spatial representation ends here; snapshot the conv's
                // channel activity before expanding to per-unit activity.
                finalize(&mut pending, &mut producers, &activity);
                let (h, w) = spatial.take().expect("validated: flatten input is spatial");
                let mut flat = Vec::with_capacity(activity.len() * h * w);
                for &a in &activity {
                    flat.extend(std::iter::repeat(a).take(h * w));
                }
                activity = flat;
            }
            Layer::Gate { .. } => {
                let values = &masks.layers()[gate_idx];
                gate_idx += 1;
                for (a, v) in activity.iter_mut().zip(values) {
                    *a *= v;
                }
            }
        }
    }
    finalize(&mut pending, &mut producers, &activity);

    Ok(WalkSummary { producers, pool_ops })
}

// --- prune rate and FLOPs ---------------------------------------------------

/// Fraction of weights removed by the mask: weights survive only between
/// active units (any nonzero activity counts as active), biases are not
/// counted, and the final output units are always active.
pub fn prune_rate<F: Scalar>(net: &GatedNetwork<F>, mask: &MaskAssignment) -> Result<f64> {
    let active = activity_walk(net, &mask.indicator())?;
    let full = activity_walk(net, &MaskAssignment::all_ones(net.gate_counts()))?;
    let count = |s: &WalkSummary| -> f64 {
        s.producers
            .iter()
            .map(|p| p.kernel * p.e_in * p.e_out)
            .sum()
    };
    let total = count(&full);
    let kept = count(&active);
    Ok(1.0 - kept / total)
}

/// Expected forward-pass floating-point operations under per-gate activity
/// probabilities (2 FLOPs per multiply-accumulate; pooling costs one
/// operation per surviving output element; elementwise activations are not
/// counted).
///
/// With a 0/1 mask this is the exact FLOP count of the pruned network.
pub fn expected_flops<F: Scalar>(net: &GatedNetwork<F>, probs: &MaskAssignment) -> Result<f64> {
    let walk = activity_walk(net, probs)?;
    let mac: f64 = walk
        .producers
        .iter()
        .map(|p| 2.0 * p.kernel * p.e_in * p.e_out * p.out_elems)
        .sum();
    Ok(mac + walk.pool_ops)
}

/// Expected FLOPs of one training step relative to one forward pass: ARM
/// runs two forward passes plus a backward charged as two forward
/// equivalents (4x); AR runs one forward plus the same backward (3x).
pub fn training_flops_multiplier(estimator: Estimator) -> f64 {
    match estimator {
        Estimator::Arm => 4.0,
        Estimator::Ar => 3.0,
    }
}

// --- histogram and report ---------------------------------------------------

/// Counts of gate probabilities over 50 equal-width bins spanning [0, 1].
/// A probability of exactly 1 lands in the last bin.
pub fn gate_histogram(bank: &GateBank) -> Vec<u64> {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for g in bank.expectation_mask() {
        let idx = ((g * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1;
    }
    bins
}

/// Snapshot of how sparse the network is at a given threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Active group counts per gated layer.
    pub pruned_arch: Vec<usize>,
    /// Fraction of weights removed, in [0, 1].
    pub prune_rate: f64,
    /// Exact forward FLOPs of the thresholded network.
    pub exp_flops_fwd: f64,
    /// Gate probability histogram (50 bins over [0, 1]).
    pub histogram: Vec<u64>,
    /// Threshold the report was taken at.
    pub tau: f64,
}

impl SparsityReport {
    /// Architecture summary like "143-153-78".
    pub fn arch_string(&self) -> String {
        self.pruned_arch
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Build the full sparsity report for a network at threshold `tau`.
pub fn sparsity_report<F: Scalar>(
    net: &GatedNetwork<F>,
    bank: &GateBank,
    tau: f64,
) -> Result<SparsityReport> {
    let mask = threshold_mask(bank, tau)?;
    let rate = prune_rate(net, &mask)?;
    let flops = expected_flops(net, &mask.indicator())?;
    Ok(SparsityReport {
        pruned_arch: pruned_architecture(bank, tau)?,
        prune_rate: rate,
        exp_flops_fwd: flops,
        histogram: gate_histogram(bank),
        tau,
    })
}

// --- accuracy ---------------------------------------------------------------

/// Fraction of rows whose largest logit is at the target index. Ties go to
/// the lowest index.
pub fn accuracy<F: Scalar>(logits: &Array2<F>, targets: &[usize]) -> Result<f64> {
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::Domain("accuracy over an empty batch".into()));
    }
    if targets.len() != n {
        return Err(Error::Contract(format!(
            "{} targets for {} rows",
            targets.len(),
            n
        )));
    }
    let mut correct = 0usize;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let mut best = 0usize;
        let mut best_v = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        if best == t {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Convenience wrapper: forward the batch under a fixed mask and score it.
pub fn masked_accuracy<F: Scalar>(
    net: &GatedNetwork<F>,
    batch: &Batch<F>,
    targets: &[usize],
    mask: &MaskAssignment,
) -> Result<f64> {
    let (logits, _) = crate::nn::forward(net, batch, mask)?;
    accuracy(&logits, targets)
}

// ---------------------------------------------------------------------------
