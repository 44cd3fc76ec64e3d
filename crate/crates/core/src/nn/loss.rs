//! Batch-mean losses with their logit gradients.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Mean loss over the batch and its gradient w.r.t. the logits.
///
/// Cross-entropy runs softmax with max-subtraction in double precision
/// regardless of the network's element type. MSE treats the target as a
/// one-hot vector and averages the squared error over the batch (summed
/// over classes).
pub fn loss<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
    kind: LossKind,
) -> Result<(f64, Array2<F>)> {
    let (n, c) = logits.dim();
    if n == 0 {
        return Err(Error::Domain("loss over an empty batch".into()));
    }
    if targets.len() != n {
        return Err(Error::Contract(format!(
            "{n} logit rows but {} targets",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Contract(format!(
            "target class {bad} out of range for {c} classes"
        )));
    }

    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::<F>::zeros((n, c));
    let mut total = 0.0;

    match kind {
        LossKind::CrossEntropy => {
            for (i, (row, g_row)) in logits
                .rows()
                .into_iter()
                .zip(grad.rows_mut().into_iter())
                .enumerate()
            {
                let x: Vec<f64> = row.iter().map(|v| v.into_f64()).collect();
                let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let sum_exp: f64 = x.iter().map(|&v| (v - m).exp()).sum();
                let log_z = m + sum_exp.ln();
                total += log_z - x[targets[i]];
                for (j, gv) in g_row.into_iter().enumerate() {
                    let p = (x[j] - log_z).exp();
                    let y = if j == targets[i] { 1.0 } else { 0.0 };
                    *gv = F::from_f64((p - y) * inv_n);
                }
            }
        }
        LossKind::Mse => {
            for (i, (row, g_row)) in logits
                .rows()
                .into_iter()
                .zip(grad.rows_mut().into_iter())
                .enumerate()
            {
                for (j, (v, gv)) in row.iter().zip(g_row.into_iter()).enumerate() {
                    let y = if j == targets[i] { 1.0 } else { 0.0 };
                    let e = v.into_f64() - y;
                    total += e * e;
                    *gv = F::from_f64(2.0 * e * inv_n);
                }
            }
        }
    }

    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Array2::<f64>::zeros((3, 10));
        let (l, _) = loss(&logits, &[1, 5, 9], LossKind::CrossEntropy).unwrap();
        assert!((l - 10.0f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn two_sample_hand_case() {
        // Each row's loss is ln(1 + e^-1); the batch mean equals it too.
        let logits = array![[1.0f64, 0.0], [0.0, 1.0]];
        let (l, _) = loss(&logits, &[0, 1], LossKind::CrossEntropy).unwrap();
        assert!((l - 0.31326168751822286).abs() < 1e-14, "{l}");
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero_per_row() {
        let logits = array![[0.3f64, -1.2, 2.0], [0.0, 0.1, -0.4]];
        let (_, g) = loss(&logits, &[2, 0], LossKind::CrossEntropy).unwrap();
        for row in g.rows() {
            let s: f64 = row.sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn cross_entropy_is_shift_invariant_and_stable() {
        let a = array![[0.5f64, -0.5, 0.1]];
        let b = a.mapv(|v| v + 1000.0);
        let (la, _) = loss(&a, &[1], LossKind::CrossEntropy).unwrap();
        let (lb, _) = loss(&b, &[1], LossKind::CrossEntropy).unwrap();
        assert!((la - lb).abs() < 1e-9);
        assert!(lb.is_finite());
    }

    #[test]
    fn mse_of_exact_onehot_is_zero() {
        let logits = array![[1.0f64, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let (l, g) = loss(&logits, &[0, 2], LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let base = array![[0.4f64, -0.3, 0.9], [-1.0, 0.2, 0.0]];
        let targets = [2usize, 1];
        let eps = 1e-6;
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let (_, g) = loss(&base, &targets, kind).unwrap();
            for i in 0..2 {
                for j in 0..3 {
                    let mut hi = base.clone();
                    let mut lo = base.clone();
                    hi[[i, j]] += eps;
                    lo[[i, j]] -= eps;
                    let (lh, _) = loss(&hi, &targets, kind).unwrap();
                    let (ll, _) = loss(&lo, &targets, kind).unwrap();
                    let fd = (lh - ll) / (2.0 * eps);
                    assert!(
                        (fd - g[[i, j]]).abs() < 1e-8,
                        "{kind:?} [{i},{j}]: fd {fd} vs {}",
                        g[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_empty_and_mismatched_batches() {
        let logits = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            loss(&logits, &[], LossKind::CrossEntropy),
            Err(Error::Domain(_))
        ));
        let logits = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            loss(&logits, &[0], LossKind::CrossEntropy),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            loss(&logits, &[0, 3], LossKind::CrossEntropy),
            Err(Error::Contract(_))
        ));
    }
}
