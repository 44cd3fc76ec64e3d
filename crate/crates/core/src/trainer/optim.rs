//! First-order optimizers: Adam with bias correction and Nesterov-momentum
//! SGD in look-ahead form.
//!
//! State is kept per parameter tensor in the parameter's own element type,
//! so checkpoints round-trip bit-exactly. The same optimizer configuration
//! drives both the weights and the gate parameters; they hold separate
//! moment arrays but share hyperparameters and step count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

// --- configuration ----------------------------------------------------------

/// Optimizer family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerSpec {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Nesterov {
        lr: f64,
        momentum: f64,
    },
}

impl OptimizerSpec {
    /// Standard Adam defaults at the given learning rate.
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn nesterov(lr: f64, momentum: f64) -> Self {
        OptimizerSpec::Nesterov { lr, momentum }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Adam { .. } => "adam",
            OptimizerSpec::Nesterov { .. } => "nesterov",
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerSpec::Adam { lr, .. } => *lr,
            OptimizerSpec::Nesterov { lr, .. } => *lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi_exclusive: f64| -> Result<()> {
            if !v.is_finite() || v < lo || v >= hi_exclusive {
                return Err(Error::Domain(format!(
                    "{name} must lie in [{lo}, {hi_exclusive}), got {v}"
                )));
            }
            Ok(())
        };
        match self {
            OptimizerSpec::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr.is_finite() && *lr > 0.0) {
                    return Err(Error::Domain(format!("lr must be positive, got {lr}")));
                }
                check("beta1", *beta1, 0.0, 1.0)?;
                check("beta2", *beta2, 0.0, 1.0)?;
                if !(eps.is_finite() && *eps > 0.0) {
                    return Err(Error::Domain(format!("eps must be positive, got {eps}")));
                }
            }
            OptimizerSpec::Nesterov { lr, momentum } => {
                if !(lr.is_finite() && *lr > 0.0) {
                    return Err(Error::Domain(format!("lr must be positive, got {lr}")));
                }
                check("momentum", *momentum, 0.0, 1.0)?;
            }
        }
        Ok(())
    }
}

// --- state ------------------------------------------------------------------

/// Per-tensor moment buffers for one optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<F: Scalar> {
    /// First moments (Adam) — empty for Nesterov.
    m: Vec<Vec<F>>,
    /// Second moments (Adam) or velocities (Nesterov).
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Scalar> OptState<F> {
    /// Fresh zeroed state for tensors of the given flat sizes.
    pub fn new(spec: &OptimizerSpec, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![F::zero(); n]).collect();
        match spec {
            OptimizerSpec::Adam { .. } => OptState {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
            OptimizerSpec::Nesterov { .. } => OptState {
                m: Vec::new(),
                v: zeros(),
                t: 0,
            },
        }
    }

    /// Reassemble state from checkpointed buffers.
    pub fn from_parts(m: Vec<Vec<F>>, v: Vec<Vec<F>>, t: u64) -> Self {
        OptState { m, v, t }
    }

    pub fn first_moments(&self) -> &[Vec<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<F>] {
        &self.v
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update in place. `lr` is the schedule-resolved learning
    /// rate for this step (the configured base rate times any decay).
    pub fn step(
        &mut self,
        spec: &OptimizerSpec,
        lr: f64,
        params: &mut [&mut [F]],
        grads: &[&[F]],
    ) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} tensors, got {} params and {} grads",
                self.v.len(),
                params.len(),
                grads.len()
            )));
        }
        for i in 0..params.len() {
            if params[i].len() != self.v[i].len() || grads[i].len() != self.v[i].len() {
                return Err(Error::Contract(format!(
                    "tensor {i}: state {}, params {}, grads {}",
                    self.v[i].len(),
                    params[i].len(),
                    grads[i].len()
                )));
            }
        }
        self.t += 1;

        match *spec {
            OptimizerSpec::Adam {
                beta1,
                beta2,
                eps,
                ..
            } => {
                let b1 = F::from_f64(beta1);
                let b2 = F::from_f64(beta2);
                let one = F::one();
                let c1 = F::from_f64(1.0 - beta1.powi(self.t as i32));
                let c2 = F::from_f64(1.0 - beta2.powi(self.t as i32));
                let lr = F::from_f64(lr);
                let eps = F::from_f64(eps);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for j in 0..p.len() {
                        let gj = g[j];
                        m[j] = b1 * m[j] + (one - b1) * gj;
                        v[j] = b2 * v[j] + (one - b2) * gj * gj;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        p[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimizerSpec::Nesterov { momentum, .. } => {
                let mu = F::from_f64(momentum);
                let lr = F::from_f64(lr);
                for ((p, g), v) in params.iter_mut().zip(grads).zip(self.v.iter_mut()) {
                    for j in 0..p.len() {
                        let gj = g[j];
                        v[j] = mu * v[j] + gj;
                        p[j] -= lr * (gj + mu * v[j]);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
