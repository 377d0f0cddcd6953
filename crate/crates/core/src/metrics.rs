//! Error criteria for inferred topologies and input estimates.

use ndarray::{Array1, Array2};
use ndarray_linalg::Norm;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentInput, InputFamily, LatentInputModel};
use crate::error::{Error, Result};

/// Bundle of the evaluation quantities for one inference run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Fraction of support-pattern disagreements, in `[0, 1]`.
    pub psi_s: f64,
    /// Relative squared Frobenius distance.
    pub psi_m: f64,
    /// Mean squared gap between the true signals and the fitted families.
    pub psi_theta: Option<f64>,
    /// Mean squared gap between the pointwise input estimates and the fits.
    pub psi_f: Option<f64>,
    /// Per-iteration relative squared changes of the matrix iterate.
    pub psi_d_trace: Vec<f64>,
    /// Support threshold used for `psi_s`.
    pub sign_threshold: f64,
}

/// Support threshold derived from the true matrix: 5% of the mean magnitude
/// of its nonzero off-diagonal entries. Always report the value used.
pub fn default_tau(p_true: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((i, j), &v) in p_true.indexed_iter() {
        if i != j && v.abs() > 1e-12 {
            total += v.abs();
            count += 1;
        }
    }
    if count == 0 {
        1e-6
    } else {
        0.05 * total / count as f64
    }
}

fn check_dims(p_hat: &Array2<f64>, p_true: &Array2<f64>) -> Result<()> {
    if p_hat.dim() != p_true.dim() || p_hat.nrows() != p_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrices have shapes {:?} and {:?}",
            p_hat.dim(),
            p_true.dim()
        )));
    }
    Ok(())
}

/// Fraction of entries whose thresholded support differs: an entry counts
/// when exactly one of `|p_hat_ij| > tau`, `|p_true_ij| > tau` holds.
pub fn structure_error(p_hat: &Array2<f64>, p_true: &Array2<f64>, tau: f64) -> Result<f64> {
    check_dims(p_hat, p_true)?;
    if tau < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "support threshold must be nonnegative, got {tau}"
        )));
    }
    let n = p_hat.nrows();
    let mismatches = p_hat
        .iter()
        .zip(p_true.iter())
        .filter(|(a, b)| (a.abs() > tau) != (b.abs() > tau))
        .count();
    Ok(mismatches as f64 / (n * n) as f64)
}

/// `||P_hat - P||_F^2 / ||P||_F^2`
pub fn magnitude_error(p_hat: &Array2<f64>, p_true: &Array2<f64>) -> Result<f64> {
    check_dims(p_hat, p_true)?;
    let denom = p_true.norm_l2();
    if denom == 0.0 {
        return Err(Error::InvalidParameter(
            "true matrix is zero; relative error undefined".into(),
        ));
    }
    let num = (p_hat - p_true).norm_l2();
    Ok((num / denom).powi(2))
}

/// Evaluate a fitted per-agent input at step `k` (zero before its estimated
/// injection time, the family value after).
pub fn fitted_value(
    estimate: &Option<AgentInput>,
    family: InputFamily,
    k: usize,
) -> f64 {
    match estimate {
        Some(fit) if k >= fit.injection_time => family.eval(&fit.theta, k as f64),
        _ => 0.0,
    }
}

/// Mean squared gap between the true signals and the fitted families over
/// all agents and steps `1..=k_max`, normalized by `k_max * n`.
pub fn input_param_error(
    truth: &LatentInputModel,
    estimates: &[Option<AgentInput>],
    family: InputFamily,
    k_max: usize,
) -> Result<f64> {
    let n = truth.n();
    if estimates.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {n} agents",
            estimates.len()
        )));
    }
    let mut total = 0.0;
    for j in 0..n {
        for k in 1..=k_max {
            let gap = truth.value(j, k) - fitted_value(&estimates[j], family, k);
            total += gap * gap;
        }
    }
    Ok(total / (k_max * n) as f64)
}

/// Mean squared gap between the pointwise input estimates and the fitted
/// families. `u_hat` holds one row per agent; column `k - 1` is the estimate
/// for generation step `k`, so the last observation step (which admits no
/// one-step-ahead estimate) contributes nothing. The normalization still
/// uses the full `k_max * n`.
pub fn fitting_error(
    u_hat: &Array2<f64>,
    estimates: &[Option<AgentInput>],
    family: InputFamily,
    k_max: usize,
) -> Result<f64> {
    let n = u_hat.nrows();
    if estimates.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {n} agents",
            estimates.len()
        )));
    }
    let mut total = 0.0;
    for j in 0..n {
        for k in 1..=u_hat.ncols() {
            let gap = u_hat[[j, k - 1]] - fitted_value(&estimates[j], family, k);
            total += gap * gap;
        }
    }
    Ok(total / (k_max * n) as f64)
}

/// Relative squared change between consecutive matrix iterates:
/// `||P_i - P_prev||_F^2 / ||P_prev||_F^2`.
pub fn iteration_difference(p_i: &Array2<f64>, p_prev: &Array2<f64>) -> Result<f64> {
    check_dims(p_i, p_prev)?;
    let denom = p_prev.norm_l2();
    if denom == 0.0 {
        return Err(Error::InvalidParameter(
            "previous iterate is zero; relative change undefined".into(),
        ));
    }
    Ok(((p_i - p_prev).norm_l2() / denom).powi(2))
}

/// Squared-error column vector of a fitted input signal against tabulated
/// values at the given steps.
pub fn family_residuals(
    family: InputFamily,
    theta: &[f64; 3],
    ks: &[f64],
    values: &[f64],
) -> Array1<f64> {
    Array1::from_shape_fn(ks.len(), |i| family.eval(theta, ks[i]) - values[i])
}
