//! Steady-period detection and time-invariant input filtering.
//!
//! A constant latent input leaves two signatures on the trajectory once the
//! transients have died out: the whole state drifts at a common rate `c` per
//! unit time, and the agents hold fixed offsets `r` relative to a reference
//! agent (the last one). Estimating `(c, r)` over the steady window and
//! subtracting `c * eps * k * 1 + r` from every observation recovers a
//! series that evolves like the input-free consensus, which a plain least
//! squares over consecutive pairs then maps to the interaction matrix.
//!
//! `c` is reported per unit time (increments divided by the sampling
//! period), so the filter scales it by `eps` per discrete step.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Norm, SVD};

use crate::dynamics::{closed_form_state, drift_rate, ObservationSet};
use crate::error::{Error, Result};
use crate::graph::SpectralData;

/// Condition-number threshold beyond which a design is treated as rank
/// deficient.
const CONDITION_LIMIT: f64 = 1e12;

/// Detection tolerance used for noiseless data.
const MIN_EPS_TOL: f64 = 1e-6;

/// Steady-period summary of one trajectory.
#[derive(Debug, Clone)]
pub struct SteadyStateEstimate {
    /// First index of the steady window, `1 < k_eps <= K`.
    pub k_eps: usize,
    /// Drift rate per unit time.
    pub c: f64,
    /// Offset vector relative to the last agent; its last entry is zero.
    pub r: Array1<f64>,
    /// Filtered series, one column per observation.
    pub z0_hat: Array2<f64>,
}

/// Default detection tolerance. The detection criterion compares
/// discrepancies against `eps * eps_tol`, so the noise-derived default is
/// divided by the sampling period to keep the effective threshold at
/// `10 sigma / sqrt(n)`, which dominates the noise in the compared
/// differences. Floored for noiseless data.
pub fn default_eps_tol(obs: &ObservationSet) -> f64 {
    (10.0 * obs.noise_sigma() / ((obs.n() as f64).sqrt() * obs.epsilon())).max(MIN_EPS_TOL)
}

/// First index `k0` in `2..K` at which every agent's discrepancy from the
/// reference agent matches its final value within `eps * eps_tol`.
///
/// The final observation itself is excluded: a trajectory that only
/// "settles" at its last sample has no usable steady window and is reported
/// as [`Error::NotConverged`].
pub fn detect_convergence_time(obs: &ObservationSet, eps_tol: f64) -> Result<usize> {
    let k_max = obs.k_max();
    if k_max < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 observations, got {k_max}"
        )));
    }
    if eps_tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "detection tolerance must be positive, got {eps_tol}"
        )));
    }
    let n = obs.n();
    let tol = obs.epsilon() * eps_tol;
    let discrepancy = |k: usize| -> Array1<f64> {
        let z = obs.state(k);
        let reference = z[n - 1];
        z.mapv(|v| v - reference)
    };
    let last = discrepancy(k_max);
    for k0 in 2..k_max {
        let p = discrepancy(k0);
        let gap = (&p - &last).iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gap < tol {
            return Ok(k0);
        }
    }
    Err(Error::NotConverged {
        scanned: k_max - 1,
        tol,
    })
}

/// Averaging window for the drift/offset estimates. When the steady period
/// holds fewer than 3 samples the window widens to the last
/// `max(3, ceil(K/5))` observations.
fn steady_window(k_eps: usize, k_max: usize) -> usize {
    if k_max - k_eps < 3 {
        let width = 3.max(k_max.div_ceil(5)).min(k_max - 1);
        let start = k_max + 1 - width;
        log::warn!(
            "steady window [{k_eps}, {k_max}] too short; widening to [{start}, {k_max}]"
        );
        start
    } else {
        k_eps
    }
}

/// Estimate the drift rate and the reference-relative offsets over the
/// steady window `[k_eps, K]`.
///
/// The drift is the across-agent mean of the per-step increments divided by
/// the sampling period; the offsets average `z~(k) - z~_N(k) * 1`, so the
/// last entry is exactly zero.
pub fn estimate_drift_offset(obs: &ObservationSet, k_eps: usize) -> Result<(f64, Array1<f64>)> {
    let k_max = obs.k_max();
    if k_eps < 1 || k_eps >= k_max {
        return Err(Error::InvalidParameter(format!(
            "steady start {k_eps} outside 1..{k_max}"
        )));
    }
    let n = obs.n();
    let start = steady_window(k_eps, k_max);

    let mut slope = Array1::<f64>::zeros(n);
    for k in start..k_max {
        let inc = &obs.state(k + 1) - &obs.state(k);
        slope += &inc;
    }
    slope /= (k_max - start) as f64 * obs.epsilon();
    let c = slope.mean().unwrap();

    let mut r = Array1::<f64>::zeros(n);
    for k in start..=k_max {
        let z = obs.state(k);
        let reference = z[n - 1];
        r += &z.mapv(|v| v - reference);
    }
    r /= (k_max - start + 1) as f64;
    Ok((c, r))
}

/// Remove a constant input's signature: `z0_hat(k) = z~(k) - c*eps*k*1 - r`.
pub fn filter_time_invariant_input(
    obs: &ObservationSet,
    c: f64,
    r: &Array1<f64>,
) -> Result<Array2<f64>> {
    let n = obs.n();
    if r.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "offset vector has {} entries, expected {n}",
            r.len()
        )));
    }
    let step = c * obs.epsilon();
    let mut out = Array2::<f64>::zeros((n, obs.k_max()));
    for k in 1..=obs.k_max() {
        let drift = step * k as f64;
        let col = obs.state(k).mapv(|v| v - drift) - r;
        out.column_mut(k - 1).assign(&col);
    }
    Ok(out)
}

/// Detect the steady period, estimate `(c, r)`, and filter the trajectory in
/// one pass. `eps_tol` defaults to [`default_eps_tol`].
pub fn separate(obs: &ObservationSet, eps_tol: Option<f64>) -> Result<SteadyStateEstimate> {
    let tol = eps_tol.unwrap_or_else(|| default_eps_tol(obs));
    let k_eps = detect_convergence_time(obs, tol)?;
    let (c, r) = estimate_drift_offset(obs, k_eps)?;
    let z0_hat = filter_time_invariant_input(obs, c, &r)?;
    Ok(SteadyStateEstimate { k_eps, c, r, z0_hat })
}

/// Unconstrained least-squares estimate of the transition matrix from
/// consecutive columns of a series: the minimizer of
/// `sum_k ||z(k+1) - P z(k)||^2`, computed through the singular value
/// decomposition of the design block.
///
/// Requires at least `n + 1` columns and a full-rank design; otherwise the
/// data cannot pin down a unique matrix and [`Error::RankDeficient`] is
/// returned.
pub fn least_squares_estimate(series: &Array2<f64>) -> Result<Array2<f64>> {
    let n = series.nrows();
    let k = series.ncols();
    if k < n + 1 {
        return Err(Error::RankDeficient { cond: f64::INFINITY });
    }
    let x = series.slice(ndarray::s![.., ..k - 1]).to_owned();
    let y = series.slice(ndarray::s![.., 1..]).to_owned();

    let (u_opt, sigma, vt_opt) = x
        .svd(true, true)
        .map_err(|e| Error::InvalidParameter(format!("design svd failed: {e}")))?;
    let u = u_opt.expect("requested");
    let vt = vt_opt.expect("requested");

    let s_max = sigma[0];
    let s_min = sigma[n - 1];
    if s_min <= 0.0 || s_max / s_min > CONDITION_LIMIT {
        return Err(Error::RankDeficient {
            cond: if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
        });
    }

    // P = Y X^+ with X^+ = V S^{-1} U^T restricted to the leading n values.
    let vt_thin = vt.slice(ndarray::s![..n, ..]);
    let mut scaled = vt_thin.t().to_owned(); // (k-1) x n
    for (j, col) in scaled.columns_mut().into_iter().enumerate() {
        let mut col = col;
        col.mapv_inplace(|v| v / sigma[j]);
    }
    Ok(y.dot(&scaled).dot(&u.t()))
}

/// Upper envelope for the filtering error at time `t`: the slowest surviving
/// mode scaled by the input mode vector, `exp(-|lambda_2| t) * ||m||`.
pub fn separation_error_bound(spec: &SpectralData, u: &Array1<f64>, t: f64) -> Result<f64> {
    let sep = closed_form_state(spec, &Array1::zeros(spec.n()), u, 0.0)?;
    Ok((-spec.lambda2_modulus() * t).exp() * sep.m_vector.norm_l2())
}

/// Actual filtering error at time `t` for a constant input: the norm of the
/// still-decaying input modes, `||z_u(t) - c t 1 - m||`.
pub fn separation_error_actual(spec: &SpectralData, u: &Array1<f64>, t: f64) -> Result<f64> {
    let sep = closed_form_state(spec, &Array1::zeros(spec.n()), u, t)?;
    let c = drift_rate(spec, u)?;
    let residual = sep.zu_part.mapv(|v| v - c * t) - &sep.m_vector;
    Ok(residual.norm_l2())
}
