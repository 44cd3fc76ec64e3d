//! Gradient estimators for expectations over Bernoulli gate masks.
//!
//! Two tiers share the same antithetic machinery. The `*_grad` functions
//! estimate the gradient with respect to the gate parameters `phi` of
//! `E_{z ~ Ber(g(phi))}[f(z)]`: their data terms live in the logit of the
//! keep-probability and are converted to `phi`-space by the gate's logit
//! slope, so they agree with the exhaustive-enumeration oracle regardless
//! of gate family or sharpness. The `*_update` functions drive training:
//! they keep the data term in the logit parameterization (a positive
//! diagonal preconditioning of the same descent direction) so that update
//! noise stays bounded near gate saturation, while the penalty gradient
//! enters in `phi`-space exactly. A score-function (REINFORCE) baseline is
//! included for variance comparison only; it never drives training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateBank;

/// Exhaustive enumeration walks all `2^V` masks; refuse beyond this size.
pub const MAX_ENUM_GATES: usize = 20;

// ---------------------------------------------------------------------------
// Objectives over binary masks
// ---------------------------------------------------------------------------

/// A deterministic real-valued function of a binary mask.
pub trait BinaryObjective {
    fn dim(&self) -> usize;
    fn evaluate(&self, z: &[bool]) -> f64;
}

/// Objective backed by an explicit table of `2^dim` values; mask bit `v`
/// (gate `v`) selects bit `v` of the table index.
#[derive(Debug, Clone)]
pub struct TabularObjective {
    dim: usize,
    values: Vec<f64>,
}

impl TabularObjective {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim > MAX_ENUM_GATES {
            return Err(Error::Guard(format!(
                "tabular objective over {dim} gates needs 2^{dim} entries (limit {MAX_ENUM_GATES})"
            )));
        }
        if values.len() != 1 << dim {
            return Err(Error::Contract(format!(
                "table for {dim} gates needs {} entries, got {}",
                1usize << dim,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("table entries must be finite, got {bad}")));
        }
        Ok(TabularObjective { dim, values })
    }

    /// Table with entries drawn uniformly from [0, 1).
    pub fn random<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim > MAX_ENUM_GATES {
            return Err(Error::Guard(format!(
                "tabular objective over {dim} gates exceeds limit {MAX_ENUM_GATES}"
            )));
        }
        let values = (0..1usize << dim).map(|_| rng.gen::<f64>()).collect();
        Self::new(dim, values)
    }

    fn index(&self, z: &[bool]) -> usize {
        z.iter()
            .enumerate()
            .fold(0usize, |acc, (v, &on)| acc | (usize::from(on) << v))
    }
}

impl BinaryObjective for TabularObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, z: &[bool]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        self.values[self.index(z)]
    }
}

// ---------------------------------------------------------------------------
// Single-sample estimators
// ---------------------------------------------------------------------------

/// One single-sample gradient estimate.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    pub grad_phi: Vec<f64>,
    /// Objective evaluations this estimate consumed (antithetic pair: 2,
    /// single-evaluation variants: 1).
    pub n_forward_evals: u32,
}

fn check_inputs(bank: &GateBank, f: &[(&str, f64)], vecs: &[(&str, usize)]) -> Result<()> {
    for (name, val) in f {
        if !val.is_finite() {
            return Err(Error::Domain(format!("{name} must be finite, got {val}")));
        }
    }
    for (name, len) in vecs {
        if *len != bank.len() {
            return Err(Error::Contract(format!(
                "{name} has length {len}, bank has {} gates",
                bank.len()
            )));
        }
    }
    Ok(())
}

/// Antithetic two-evaluation estimator.
///
/// `f_true = f(1[u < g(phi)])` and `f_anti = f(1[u > 1 - g(phi)])` must
/// come from the same uniform draw `u`. `lambda_term` is the gradient of
/// any deterministic penalty (already multiplied by `g'(phi)`), added
/// elementwise. The data term `(f_anti - f_true) * (u - 1/2)` estimates the
/// logit-space gradient; it is scaled by the gate's logit slope so the
/// result is the gradient with respect to `phi` itself.
pub fn arm_grad(
    bank: &GateBank,
    f_true: f64,
    f_anti: f64,
    u: &[f64],
    lambda_term: &[f64],
) -> Result<GradEstimate> {
    check_inputs(
        bank,
        &[("f_true", f_true), ("f_anti", f_anti)],
        &[("u", u.len()), ("lambda_term", lambda_term.len())],
    )?;
    let slopes = bank.logit_slopes();
    let diff = f_anti - f_true;
    let grad_phi = (0..bank.len())
        .map(|v| slopes[v] * diff * (u[v] - 0.5) + lambda_term[v])
        .collect();
    Ok(GradEstimate { grad_phi, n_forward_evals: 2 })
}

/// Single-evaluation variant: data term `f_true * (1 - 2u)`, same logit
/// slope conversion and penalty handling as [`arm_grad`]. Unbiased but
/// higher variance.
pub fn ar_grad(bank: &GateBank, f_true: f64, u: &[f64], lambda_term: &[f64]) -> Result<GradEstimate> {
    check_inputs(
        bank,
        &[("f_true", f_true)],
        &[("u", u.len()), ("lambda_term", lambda_term.len())],
    )?;
    let slopes = bank.logit_slopes();
    let grad_phi = (0..bank.len())
        .map(|v| slopes[v] * f_true * (1.0 - 2.0 * u[v]) + lambda_term[v])
        .collect();
    Ok(GradEstimate { grad_phi, n_forward_evals: 1 })
}

/// Mask for the raw update terms: 1 where the gate responds to `phi`,
/// 0 where its response is flat (a hard-sigmoid gate at saturation or a
/// kink). A flat gate's Bernoulli draw is deterministic, so its draw
/// carries no information about the objective; dropping the term keeps a
/// frozen gate frozen instead of feeding it zero-mean noise.
fn live_mask(bank: &GateBank) -> Vec<f64> {
    bank.gate_grads()
        .iter()
        .map(|&d| if d == 0.0 { 0.0 } else { 1.0 })
        .collect()
}

/// Antithetic two-evaluation update direction used for training.
///
/// Unlike [`arm_grad`], the data term `(f_anti - f_true) * (u - 1/2)` is
/// kept in the logit parameterization of the keep-probability instead of
/// being converted to `phi`-space — a positive per-coordinate
/// preconditioning that keeps the update's noise bounded as gates approach
/// saturation, which is what lets the sparsity penalty (whose exact
/// `phi`-gradient enters via `lambda_term`) finish the job of pushing
/// gates onto the boundary. Coordinates where the gate has zero response
/// receive no data term at all.
pub fn arm_update(
    bank: &GateBank,
    f_true: f64,
    f_anti: f64,
    u: &[f64],
    lambda_term: &[f64],
) -> Result<GradEstimate> {
    check_inputs(
        bank,
        &[("f_true", f_true), ("f_anti", f_anti)],
        &[("u", u.len()), ("lambda_term", lambda_term.len())],
    )?;
    let live = live_mask(bank);
    let diff = f_anti - f_true;
    let grad_phi = (0..bank.len())
        .map(|v| live[v] * diff * (u[v] - 0.5) + lambda_term[v])
        .collect();
    Ok(GradEstimate { grad_phi, n_forward_evals: 2 })
}

/// Single-evaluation update direction used for training: data term
/// `f_true * (1 - 2u)` in the logit parameterization, penalty handling and
/// flat-gate masking as in [`arm_update`].
pub fn ar_update(bank: &GateBank, f_true: f64, u: &[f64], lambda_term: &[f64]) -> Result<GradEstimate> {
    check_inputs(
        bank,
        &[("f_true", f_true)],
        &[("u", u.len()), ("lambda_term", lambda_term.len())],
    )?;
    let live = live_mask(bank);
    let grad_phi = (0..bank.len())
        .map(|v| live[v] * f_true * (1.0 - 2.0 * u[v]) + lambda_term[v])
        .collect();
    Ok(GradEstimate { grad_phi, n_forward_evals: 1 })
}

/// Score-function baseline: `f * (z_v - g_v) * g'(phi_v) / (g_v (1 - g_v))`
/// with the denominator probabilities clamped to `[1e-6, 1 - 1e-6]`.
/// Benchmarking only; high variance.
pub fn reinforce_grad(bank: &GateBank, f_true: f64, z: &[bool]) -> Result<GradEstimate> {
    check_inputs(bank, &[("f_true", f_true)], &[("z", z.len())])?;
    let probs = bank.expectation_mask();
    let grads = bank.gate_grads();
    let grad_phi = (0..bank.len())
        .map(|v| {
            let g = probs[v];
            let gc = g.clamp(1e-6, 1.0 - 1e-6);
            let score = (if z[v] { 1.0 } else { 0.0 } - g) / (gc * (1.0 - gc));
            f_true * score * grads[v]
        })
        .collect();
    Ok(GradEstimate { grad_phi, n_forward_evals: 1 })
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration oracle
// ---------------------------------------------------------------------------

fn check_enum_size(obj: &dyn BinaryObjective, bank: Option<&GateBank>) -> Result<usize> {
    let v = obj.dim();
    if let Some(b) = bank {
        if b.len() != v {
            return Err(Error::Contract(format!(
                "objective has {v} gates, bank has {}",
                b.len()
            )));
        }
    }
    if v > MAX_ENUM_GATES {
        return Err(Error::Guard(format!(
            "exhaustive enumeration over {v} gates would visit 2^{v} masks (limit {MAX_ENUM_GATES})"
        )));
    }
    Ok(v)
}

/// Exact gradient of `E[f(z)]` with respect to every `phi_v`, by
/// enumeration: `g'(phi_v) * (E[f | z_v = 1] - E[f | z_v = 0])`, each
/// conditional expectation summing the other gates with their Bernoulli
/// weights. The conditional-difference form avoids differentiating the
/// product of probability masses, so no cancellation of tiny products.
pub fn exact_grad(obj: &dyn BinaryObjective, bank: &GateBank) -> Result<Vec<f64>> {
    let v_total = check_enum_size(obj, Some(bank))?;
    let probs = bank.expectation_mask();
    let gate_grads = bank.gate_grads();
    let mut grad = vec![0.0; v_total];
    let mut z = vec![false; v_total];

    for v in 0..v_total {
        if gate_grads[v] == 0.0 {
            continue; // saturated gate: phi has no local influence
        }
        let others: Vec<usize> = (0..v_total).filter(|&w| w != v).collect();
        let mut acc = 0.0;
        for m in 0..1u64 << others.len() {
            let mut weight = 1.0;
            for (bit, &w) in others.iter().enumerate() {
                let on = (m >> bit) & 1 == 1;
                z[w] = on;
                weight *= if on { probs[w] } else { 1.0 - probs[w] };
            }
            if weight == 0.0 {
                continue;
            }
            z[v] = true;
            let f1 = obj.evaluate(&z);
            z[v] = false;
            let f0 = obj.evaluate(&z);
            acc += weight * (f1 - f0);
        }
        grad[v] = gate_grads[v] * acc;
    }
    Ok(grad)
}

/// `E[f(z)]` under the bank's Bernoulli distribution, by full enumeration.
pub fn exhaustive_expectation(obj: &dyn BinaryObjective, bank: &GateBank) -> Result<f64> {
    let v_total = check_enum_size(obj, Some(bank))?;
    let probs = bank.expectation_mask();
    let mut z = vec![false; v_total];
    let mut acc = 0.0;
    for m in 0..1u64 << v_total {
        let mut weight = 1.0;
        for (v, zv) in z.iter_mut().enumerate() {
            let on = (m >> v) & 1 == 1;
            *zv = on;
            weight *= if on { probs[v] } else { 1.0 - probs[v] };
        }
        if weight != 0.0 {
            acc += weight * obj.evaluate(&z);
        }
    }
    Ok(acc)
}

/// Minimum of `f` over all masks, by full enumeration.
pub fn exhaustive_min(obj: &dyn BinaryObjective) -> Result<f64> {
    let v_total = check_enum_size(obj, None)?;
    let mut z = vec![false; v_total];
    let mut best = f64::INFINITY;
    for m in 0..1u64 << v_total {
        for (v, zv) in z.iter_mut().enumerate() {
            *zv = (m >> v) & 1 == 1;
        }
        best = best.min(obj.evaluate(&z));
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Bias / variance benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Arm,
    Ar,
    Reinforce,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Arm => "arm",
            EstimatorKind::Ar => "ar",
            EstimatorKind::Reinforce => "reinforce",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Self-test hook: corrupt the antithetic estimator by swapping its two
    /// forward values (a pure sign flip of the data term). A working bench
    /// must flag the resulting bias; see the `estimator-check --falsify`
    /// negative control.
    pub falsify_arm_sign: bool,
}

impl BenchConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        BenchConfig {
            n_samples,
            seed,
            estimators: vec![EstimatorKind::Arm, EstimatorKind::Ar, EstimatorKind::Reinforce],
            falsify_arm_sign: false,
        }
    }
}

/// Monte-Carlo statistics for one estimator coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordStat {
    pub exact: f64,
    pub mean: f64,
    pub variance: f64,
    pub std_err: f64,
    /// `|mean - exact|` measured in standard-error units; infinite when the
    /// sampler collapsed (zero variance) yet missed the oracle.
    pub bias_in_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub coords: Vec<CoordStat>,
    pub max_bias_in_se: f64,
    /// Per-coordinate sample variances averaged over coordinates.
    pub pooled_variance: f64,
    pub forward_evals: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub gates: usize,
    pub n_samples: usize,
    pub exact: Vec<f64>,
    pub reports: Vec<EstimatorReport>,
}

/// Streaming mean/variance accumulator (Welford).
struct Moments {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for (v, &xv) in x.iter().enumerate() {
            let d = xv - self.mean[v];
            self.mean[v] += d / n;
            self.m2[v] += d * (xv - self.mean[v]);
        }
    }

    fn variance(&self, v: usize) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2[v] / (self.n as f64 - 1.0)
        }
    }
}

/// Compare estimators against the enumeration oracle on a shared stream of
/// uniform draws. Sampling is deterministic in `cfg.seed`.
pub fn estimator_bench(
    obj: &dyn BinaryObjective,
    bank: &GateBank,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.n_samples == 0 {
        return Err(Error::Domain("estimator bench needs at least one sample".into()));
    }
    if cfg.estimators.is_empty() {
        return Err(Error::Domain("estimator bench needs at least one estimator".into()));
    }
    let exact = exact_grad(obj, bank)?;
    let dim = bank.len();
    let zeros = vec![0.0; dim];
    let wants_arm = cfg.estimators.contains(&EstimatorKind::Arm);

    let mut moments: Vec<Moments> = cfg.estimators.iter().map(|_| Moments::new(dim)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for i in 0..cfg.n_samples {
        let sample = bank.sample_masks(&mut rng, i as u64);
        let f_true = obj.evaluate(&sample.z);
        let f_anti = if wants_arm { obj.evaluate(&sample.z_anti) } else { 0.0 };

        for (slot, est) in cfg.estimators.iter().enumerate() {
            let grad = match est {
                EstimatorKind::Arm => {
                    let (a, b) = if cfg.falsify_arm_sign {
                        (f_anti, f_true)
                    } else {
                        (f_true, f_anti)
                    };
                    arm_grad(bank, a, b, &sample.u, &zeros)?
                }
                EstimatorKind::Ar => ar_grad(bank, f_true, &sample.u, &zeros)?,
                EstimatorKind::Reinforce => reinforce_grad(bank, f_true, &sample.z)?,
            };
            moments[slot].push(&grad.grad_phi);
        }
    }

    let n = cfg.n_samples as f64;
    let reports = cfg
        .estimators
        .iter()
        .zip(&moments)
        .map(|(&estimator, mom)| {
            let coords: Vec<CoordStat> = (0..dim)
                .map(|v| {
                    let variance = mom.variance(v);
                    let std_err = (variance / n).sqrt();
                    let bias = (mom.mean[v] - exact[v]).abs();
                    let bias_in_se = if std_err > 0.0 {
                        bias / std_err
                    } else if bias <= 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    CoordStat { exact: exact[v], mean: mom.mean[v], variance, std_err, bias_in_se }
                })
                .collect();
            let max_bias_in_se = coords.iter().map(|c| c.bias_in_se).fold(0.0, f64::max);
            let pooled_variance = if dim == 0 {
                0.0
            } else {
                coords.iter().map(|c| c.variance).sum::<f64>() / dim as f64
            };
            let forward_evals = match estimator {
                EstimatorKind::Arm => 2 * cfg.n_samples as u64,
                _ => cfg.n_samples as u64,
            };
            EstimatorReport { estimator, coords, max_bias_in_se, pooled_variance, forward_evals }
        })
        .collect();

    Ok(BenchReport { gates: dim, n_samples: cfg.n_samples, exact, reports })
}

// ---------------------------------------------------------------------------
