//! The full sparsification objective: data loss plus the expected number of
//! active weights, with optional expected-L1/L2 magnitude shrinkage.
//!
//! The penalty terms are deterministic functions of the gate probabilities,
//! so their gradients are computed analytically. Only the data term needs a
//! stochastic gradient for the gate parameters; [`objective_step`] combines
//! both into a single update direction per mini-batch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{ar_update, arm_update};
use crate::gates::GateBank;
use crate::nn::loss::{loss, LossKind};
use crate::nn::{backward, forward, Batch, GateGroup, GatedNetwork, MaskAssignment, ParamGrads};
use crate::scalar::Scalar;

use serde::{Deserialize, Serialize};

// --- regularization configuration -------------------------------------------

/// Per-gated-layer penalty coefficients, or one value for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Global(f64),
    PerLayer(Vec<f64>),
}

impl LambdaSpec {
    /// Coefficient for gate `idx` of `bank`.
    fn for_gate(&self, bank: &GateBank, idx: usize) -> f64 {
        match self {
            LambdaSpec::Global(v) => *v,
            LambdaSpec::PerLayer(vs) => vs[bank.layer_of(idx)],
        }
    }

    fn validate(&self, num_layers: usize) -> Result<()> {
        match self {
            LambdaSpec::Global(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::Domain(format!(
                        "penalty coefficient must be finite and nonnegative, got {v}"
                    )));
                }
            }
            LambdaSpec::PerLayer(vs) => {
                if vs.len() != num_layers {
                    return Err(Error::Contract(format!(
                        "per-layer penalty has {} entries for {} gated layers",
                        vs.len(),
                        num_layers
                    )));
                }
                for v in vs {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(Error::Domain(format!(
                            "penalty coefficient must be finite and nonnegative, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Coefficients of the penalty terms added to the data loss.
///
/// `lambda_l0` multiplies the expected active-weight count and is understood
/// as already divided by the training-set size (configs specify the scaled
/// product instead; see the trainer). `group_weighted` switches the L0 term
/// from counting gates to counting the weights each gate controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub lambda_l0: LambdaSpec,
    #[serde(default)]
    pub lambda_l1: f64,
    #[serde(default)]
    pub lambda_l2: f64,
    #[serde(default = "default_group_weighted")]
    pub group_weighted: bool,
}

fn default_group_weighted() -> bool {
    true
}

impl RegularizationSpec {
    /// Pure L0 penalty with one global coefficient, weight-count weighted.
    pub fn l0_only(lambda: f64) -> Self {
        RegularizationSpec {
            lambda_l0: LambdaSpec::Global(lambda),
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            group_weighted: true,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.lambda_l0.validate(num_layers)?;
        for (name, v) in [("lambda_l1", self.lambda_l1), ("lambda_l2", self.lambda_l2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn has_shrinkage(&self) -> bool {
        self.lambda_l1 > 0.0 || self.lambda_l2 > 0.0
    }
}

// --- expected penalty values ------------------------------------------------

/// Per-gate weight of the L0 term: the group size when `group_weighted`,
/// otherwise 1. `group_sizes[v]` is the number of weights gate `v` controls.
fn l0_weight(spec: &RegularizationSpec, group_sizes: Option<&[usize]>, v: usize) -> f64 {
    match (spec.group_weighted, group_sizes) {
        (true, Some(sizes)) => sizes[v] as f64,
        _ => 1.0,
    }
}

fn check_l0_inputs(
    bank: &GateBank,
    spec: &RegularizationSpec,
    group_sizes: Option<&[usize]>,
) -> Result<()> {
    spec.validate(bank.num_layers())?;
    if spec.group_weighted {
        let Some(sizes) = group_sizes else {
            return Err(Error::Contract(
                "group-weighted L0 needs the per-gate group sizes".into(),
            ));
        };
        if sizes.len() != bank.len() {
            return Err(Error::Contract(format!(
                "{} group sizes for {} gates",
                sizes.len(),
                bank.len()
            )));
        }
    }
    Ok(())
}

/// Expected number of active weights, scaled by the L0 coefficients:
/// sum of lambda_v * |group v| * g(phi_v) (or lambda_v * g(phi_v) without
/// group weighting).
pub fn expected_l0(
    bank: &GateBank,
    spec: &RegularizationSpec,
    group_sizes: Option<&[usize]>,
) -> Result<f64> {
    check_l0_inputs(bank, spec, group_sizes)?;
    let mut total = 0.0;
    for (v, &phi) in bank.phi().iter().enumerate() {
        let lambda = spec.lambda_l0.for_gate(bank, v);
        total += lambda * l0_weight(spec, group_sizes, v) * bank.gate().eval(phi)?;
    }
    Ok(total)
}

/// Gradient of [`expected_l0`] w.r.t. each gate parameter:
/// lambda_v * |group v| * g'(phi_v).
pub fn expected_l0_grad_phi(
    bank: &GateBank,
    spec: &RegularizationSpec,
    group_sizes: Option<&[usize]>,
) -> Result<Vec<f64>> {
    check_l0_inputs(bank, spec, group_sizes)?;
    let mut out = Vec::with_capacity(bank.len());
    for (v, &phi) in bank.phi().iter().enumerate() {
        let lambda = spec.lambda_l0.for_gate(bank, v);
        out.push(lambda * l0_weight(spec, group_sizes, v) * bank.gate().grad(phi)?);
    }
    Ok(out)
}

fn check_weight_alignment(bank: &GateBank, weights: &[f64]) -> Result<()> {
    if weights.len() != bank.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} gates; expected one gate per weight",
            weights.len(),
            bank.len()
        )));
    }
    Ok(())
}

/// Expected L1 norm of the effective weights when every weight has its own
/// gate: sum of g(phi_j) * |w_j|.
pub fn expected_l1(bank: &GateBank, weights: &[f64]) -> Result<f64> {
    check_weight_alignment(bank, weights)?;
    let mut total = 0.0;
    for (&phi, &w) in bank.phi().iter().zip(weights) {
        total += bank.gate().eval(phi)? * w.abs();
    }
    Ok(total)
}

/// Expected squared L2 norm of the effective weights when every weight has
/// its own gate: sum of g(phi_j) * w_j^2. (z^2 = z for a binary gate, so the
/// probability enters linearly.)
pub fn expected_l2(bank: &GateBank, weights: &[f64]) -> Result<f64> {
    check_weight_alignment(bank, weights)?;
    let mut total = 0.0;
    for (&phi, &w) in bank.phi().iter().zip(weights) {
        total += bank.gate().eval(phi)? * w * w;
    }
    Ok(total)
}

// --- group-aligned penalty terms --------------------------------------------

/// Check that the network's gate layout matches the bank, and return the
/// group structure.
fn aligned_groups<F: Scalar>(net: &GatedNetwork<F>, bank: &GateBank) -> Result<Vec<GateGroup>> {
    if net.gate_counts() != bank.layer_counts() {
        return Err(Error::Contract(format!(
            "network gate layout {:?} does not match bank layout {:?}",
            net.gate_counts(),
            bank.layer_counts()
        )));
    }
    net.gate_groups()
}

/// Number of weights each gate controls, one entry per gate in bank order.
pub fn group_sizes<F: Scalar>(net: &GatedNetwork<F>, bank: &GateBank) -> Result<Vec<usize>> {
    let groups = aligned_groups(net, bank)?;
    let mut sizes = Vec::with_capacity(bank.len());
    for group in &groups {
        sizes.extend(std::iter::repeat(group.group_size).take(group.count));
    }
    Ok(sizes)
}

/// Per-gate sums of |w| and w^2 over the weight group each gate controls.
///
/// Groups are contiguous in the owning tensor's flat layout: a dense row is
/// `ncols` consecutive values, a conv filter is `ci*kh*kw` consecutive
/// values, so group `v` spans `[v*size, (v+1)*size)`.
fn group_weight_norms<F: Scalar>(
    net: &GatedNetwork<F>,
    groups: &[GateGroup],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let params = net.param_slices();
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    for group in groups {
        let slot = net.weight_slot(group.weights.layer())?;
        let flat = params[slot];
        for v in 0..group.count {
            let chunk = &flat[v * group.group_size..(v + 1) * group.group_size];
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            for &w in chunk {
                let w = w.into_f64();
                a1 += w.abs();
                a2 += w * w;
            }
            s1.push(a1);
            s2.push(a2);
        }
    }
    Ok((s1, s2))
}

/// Expected L1 norm with gates shared across weight groups:
/// sum over gates of g(phi_v) * sum of |w| in the group.
pub fn grouped_expected_l1<F: Scalar>(net: &GatedNetwork<F>, bank: &GateBank) -> Result<f64> {
    let groups = aligned_groups(net, bank)?;
    let (s1, _) = group_weight_norms(net, &groups)?;
    let probs = bank.expectation_mask();
    Ok(probs.iter().zip(&s1).map(|(g, s)| g * s).sum())
}

/// Expected squared L2 norm with gates shared across weight groups:
/// sum over gates of g(phi_v) * sum of w^2 in the group.
pub fn grouped_expected_l2<F: Scalar>(net: &GatedNetwork<F>, bank: &GateBank) -> Result<f64> {
    let groups = aligned_groups(net, bank)?;
    let (_, s2) = group_weight_norms(net, &groups)?;
    let probs = bank.expectation_mask();
    Ok(probs.iter().zip(&s2).map(|(g, s)| g * s).sum())
}

// --- one stochastic optimization step ---------------------------------------

/// Which unbiased gradient estimator drives the gate-parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Antithetic two-evaluation estimator: two forward passes per step.
    Arm,
    /// Single-evaluation variant: one forward pass per step.
    Ar,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Arm => "arm",
            Estimator::Ar => "ar",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arm" => Ok(Estimator::Arm),
            "ar" => Ok(Estimator::Ar),
            other => Err(Error::Domain(format!(
                "unknown estimator {other:?}; expected arm or ar"
            ))),
        }
    }
}

/// Everything one mini-batch step produces. The total objective always
/// equals `data_loss + l0_term + l1_term + l2_term` exactly as stored.
#[derive(Debug)]
pub struct StepOutput<F: Scalar> {
    /// Data loss + all enabled penalty terms.
    pub objective: f64,
    pub data_loss: f64,
    /// Coefficient-scaled expected active-weight count.
    pub l0_term: f64,
    /// Coefficient-scaled expected L1 shrinkage (0 when disabled).
    pub l1_term: f64,
    /// Coefficient-scaled expected L2 shrinkage (0 when disabled).
    pub l2_term: f64,
    /// Gradients for weights and biases, in parameter-slice order.
    pub grad_params: ParamGrads<F>,
    /// Update direction for the gate parameters: stochastic data term in
    /// the keep-probability's logit parameterization plus the analytic
    /// penalty gradient.
    pub grad_phi: Vec<f64>,
    /// Network forward passes this step consumed (2 for ARM, 1 for AR).
    pub forward_passes: usize,
}

/// Run one stochastic step of the full objective on a mini-batch.
///
/// Samples the gates once, evaluates the network under the sampled masks
/// (and under the antithetic masks for ARM), and returns the objective
/// value together with gradients for both the weights and the gate
/// parameters. The penalty terms contribute analytically: their values are
/// exact expectations and their gradients are added to the estimator's
/// data-term gradient.
#[allow(clippy::too_many_arguments)]
pub fn objective_step<F: Scalar, R: Rng + ?Sized>(
    net: &GatedNetwork<F>,
    bank: &GateBank,
    batch: &Batch<F>,
    targets: &[usize],
    spec: &RegularizationSpec,
    estimator: Estimator,
    loss_kind: LossKind,
    rng: &mut R,
    iteration: u64,
) -> Result<StepOutput<F>> {
    spec.validate(bank.num_layers())?;
    let groups = aligned_groups(net, bank)?;
    let sizes = {
        let mut sizes = Vec::with_capacity(bank.len());
        for group in &groups {
            sizes.extend(std::iter::repeat(group.group_size).take(group.count));
        }
        sizes
    };

    // Penalty values and their phi-gradients are analytic in g(phi).
    let probs = bank.expectation_mask();
    let gate_grads = bank.gate_grads();
    let l0_term = expected_l0(bank, spec, Some(&sizes))?;
    let mut lambda_term = expected_l0_grad_phi(bank, spec, Some(&sizes))?;

    let (s1, s2) = if spec.has_shrinkage() {
        group_weight_norms(net, &groups)?
    } else {
        (vec![0.0; bank.len()], vec![0.0; bank.len()])
    };
    let mut l1_term = 0.0;
    let mut l2_term = 0.0;
    if spec.has_shrinkage() {
        for v in 0..bank.len() {
            l1_term += spec.lambda_l1 * probs[v] * s1[v];
            l2_term += spec.lambda_l2 * probs[v] * s2[v];
            lambda_term[v] += gate_grads[v] * (spec.lambda_l1 * s1[v] + spec.lambda_l2 * s2[v]);
        }
    }

    // One gate sample drives the whole step.
    let sample = bank.sample_masks(rng, iteration);
    let masks_true = MaskAssignment::from_sample(&sample, bank)?;

    let (logits, cache) = forward(net, batch, &masks_true)?;
    let (data_loss, dlogits) = loss(&logits, targets, loss_kind)?;
    if !data_loss.is_finite() {
        // The training loop rewrites the location fields with the actual
        // epoch and in-epoch step; here only the global iteration is known.
        return Err(Error::Diverged {
            epoch: 0,
            step: iteration as usize,
            value: data_loss,
        });
    }

    let (estimate, forward_passes) = match estimator {
        Estimator::Arm => {
            let masks_anti = MaskAssignment::from_bits(&sample.z_anti, bank)?;
            let (logits_anti, _) = forward(net, batch, &masks_anti)?;
            let (loss_anti, _) = loss(&logits_anti, targets, loss_kind)?;
            (
                arm_update(bank, data_loss, loss_anti, &sample.u, &lambda_term)?,
                2,
            )
        }
        Estimator::Ar => (ar_update(bank, data_loss, &sample.u, &lambda_term)?, 1),
    };

    let mut grad_params = backward(net, &cache, &dlogits, &masks_true)?;

    // Shrinkage gradients w.r.t. the weights use the gate expectations, not
    // the sampled masks: d/dw of g*|w| is g*sign(w), of g*w^2 is 2*g*w.
    if spec.has_shrinkage() {
        let mut base = 0usize;
        for group in &groups {
            let slot = net.weight_slot(group.weights.layer())?;
            let flat = grad_params.tensors[slot]
                .as_slice_mut()
                .expect("standard layout");
            let weights = net.param_slices()[slot].to_vec();
            for v in 0..group.count {
                let g = probs[base + v];
                let span = v * group.group_size..(v + 1) * group.group_size;
                for (dw, w) in flat[span.clone()].iter_mut().zip(&weights[span]) {
                    let w = w.into_f64();
                    let sgn = if w == 0.0 { 0.0 } else { w.signum() };
                    let shrink = spec.lambda_l1 * g * sgn + 2.0 * spec.lambda_l2 * g * w;
                    *dw += F::from_f64(shrink);
                }
            }
            base += group.count;
        }
    }

    Ok(StepOutput {
        objective: data_loss + l0_term + l1_term + l2_term,
        data_loss,
        l0_term,
        l1_term,
        l2_term,
        grad_params,
        grad_phi: estimate.grad_phi,
        forward_passes,
    })
}

// ---------------------------------------------------------------------------
