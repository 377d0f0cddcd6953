//! Iterative topology inference for time-varying latent inputs.
//!
//! The trajectory is split at the first injection: the prefix, free of any
//! input, seeds an initial interaction-matrix estimate; the remaining
//! observations enter an alternating loop that (1) backs the input signals
//! out of the one-step prediction residuals, (2) fits the configured signal
//! family to each estimated signal, (3) rebuilds an input-free series from
//! the fits, and (4) re-estimates the matrix from that series, until two
//! consecutive matrix iterates differ by less than the termination
//! tolerance.
//!
//! Injection detection works on increment ratios. `h1` flags the first
//! injected agent: before an injection the ratio of consecutive increments
//! stays below `1 + 1/l`, and the injected step breaks that pattern. Once an
//! initial matrix estimate exists, `h2` compares each agent's prediction
//! residual against its predicted increment and flags the remaining agents.
//! Increments below the noise guard `max(1e-9, 3 sigma)` support no
//! decision and are skipped.
//!
//! Index convention: the residual `(z~_j(k) - P_[j] z~(k-1)) / eps`
//! estimates the input at generation step `k - 1`, and is stored at that
//! index, so fitted coefficients line up with generation-time indexing. The
//! last observation admits no estimate, leaving `K - 1` usable samples.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::{LeastSquaresSvd, Norm};

use crate::dynamics::{AgentInput, InputFamily, ObservationSet};
use crate::error::{Error, Result};
use crate::metrics;
use crate::solver::{self, RegressionProblem, SolverConfig, WeightKind};
use crate::totia::{self, Diagnostics, InferenceResult, SolveSummary};

/// Gauss-Newton start values for the decay rate of the exponential family.
const DECAY_STARTS: [f64; 4] = [0.01, 0.1, 0.5, 1.0];

/// Configuration of the time-varying pipeline.
#[derive(Debug, Clone)]
pub struct IeTiaConfig {
    /// Identifiability bound `l`; `None` estimates a crude value from early
    /// increments.
    pub lipschitz: Option<f64>,
    /// Termination tolerance on the relative squared change of the iterate.
    pub delta_d: f64,
    pub family: InputFamily,
    pub max_iter: usize,
    /// Number of consecutive confirming samples a detection needs (1 keeps
    /// the single-sample pattern).
    pub min_consecutive: usize,
    pub rho: Option<f64>,
    pub beta: f64,
    pub beta_normalize: bool,
    pub weight_kind: WeightKind,
    pub s_max: Option<usize>,
    pub solver: SolverConfig,
}

impl Default for IeTiaConfig {
    fn default() -> Self {
        Self {
            lipschitz: None,
            delta_d: 0.015,
            family: InputFamily::Exponential,
            max_iter: 50,
            min_consecutive: 1,
            rho: None,
            beta: 0.5,
            beta_normalize: false,
            weight_kind: WeightKind::Ws1,
            s_max: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Identified injection structure of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentificationResult {
    /// No injection pattern was found; the input is time-invariant.
    pub classified_time_invariant: bool,
    /// First injected agent (smallest index on ties).
    pub q: Option<usize>,
    /// Injection step of `q`.
    pub k_uq: Option<usize>,
    /// Every detected agent with its injection step; includes `q`.
    pub injected: BTreeMap<usize, usize>,
}

/// How the alternating loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationStatus {
    Converged,
    MaxIterations,
}

/// Per-iteration snapshot of the loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Relative squared change against the previous iterate.
    pub psi_d: f64,
    pub p_hat: Array2<f64>,
    pub input_estimates: Vec<Option<AgentInput>>,
    /// Pointwise input estimates, one row per agent, column `k - 1` for
    /// generation step `k` (see the module notes on indexing).
    pub u_hat: Array2<f64>,
    /// Mean squared gap between the pointwise estimates and the fits.
    pub fitting_error: f64,
}

/// Full record of one run of the alternating loop.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub termination: TerminationStatus,
    pub identification: IdentificationResult,
}

impl IterationTrace {
    pub fn psi_d_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.psi_d).collect()
    }
}

fn noise_guard(obs: &ObservationSet) -> f64 {
    (3.0 * obs.noise_sigma()).max(1e-9)
}

/// Increment-ratio statistic for the first injection: negative while the
/// agent follows the damped consensus pattern, nonnegative once an input
/// breaks it.
pub fn h1(obs: &ObservationSet, agent: usize, k: usize, l: f64) -> Result<f64> {
    if k < 3 || k > obs.k_max() {
        return Err(Error::InvalidParameter(format!(
            "increment ratio needs 3 <= k <= {}, got {k}",
            obs.k_max()
        )));
    }
    if l <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "identifiability bound must be positive, got {l}"
        )));
    }
    let num = obs.state(k)[agent] - obs.state(k - 1)[agent];
    let den = obs.state(k - 1)[agent] - obs.state(k - 2)[agent];
    let guard = noise_guard(obs);
    if den.abs() < guard {
        return Err(Error::DegenerateDenominator {
            k,
            value: den,
            guard,
        });
    }
    Ok((num / den).abs() - 1.0 / l - 1.0)
}

/// Residual-ratio statistic for the remaining injections: positive while the
/// prediction residual is negligible, nonpositive once an identifiable input
/// dominates it.
pub fn h2(
    obs: &ObservationSet,
    p_hat0: &Array2<f64>,
    agent: usize,
    k: usize,
    l: f64,
) -> Result<f64> {
    if k < 2 || k > obs.k_max() {
        return Err(Error::InvalidParameter(format!(
            "residual ratio needs 2 <= k <= {}, got {k}",
            obs.k_max()
        )));
    }
    if p_hat0.dim() != (obs.n(), obs.n()) {
        return Err(Error::DimensionMismatch(format!(
            "estimate has shape {:?}, expected ({n}, {n})",
            p_hat0.dim(),
            n = obs.n()
        )));
    }
    let prediction = p_hat0.row(agent).dot(&obs.state(k - 1));
    let num = prediction - obs.state(k - 1)[agent];
    let den = obs.state(k)[agent] - prediction;
    let guard = noise_guard(obs);
    if den.abs() < guard {
        return Err(Error::DegenerateDenominator {
            k,
            value: den,
            guard,
        });
    }
    Ok((num / den).abs() - l)
}

/// Scan for the first injection: the earliest step at which some agent's
/// increment ratio switches from the damped pattern (`h1 < 0`) to the broken
/// one (`h1 >= 0` for `min_consecutive` samples). Returns `None` when no
/// step qualifies, classifying the input as time-invariant.
pub fn identify_initial_injection(
    obs: &ObservationSet,
    l: f64,
    min_consecutive: usize,
) -> Result<Option<(usize, usize)>> {
    let k_max = obs.k_max();
    if k_max < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 observations, got {k_max}"
        )));
    }
    let m = min_consecutive.max(1);
    for k0 in 3..=k_max.saturating_sub(m) {
        let mut hit: Option<usize> = None;
        for agent in 0..obs.n() {
            let calm = matches!(h1(obs, agent, k0, l), Ok(v) if v < 0.0);
            if !calm {
                continue;
            }
            let broken =
                (1..=m).all(|step| matches!(h1(obs, agent, k0 + step, l), Ok(v) if v >= 0.0));
            if broken {
                hit = Some(hit.map_or(agent, |prev| prev.min(agent)));
            }
        }
        if let Some(agent) = hit {
            return Ok(Some((agent, k0)));
        }
    }
    Ok(None)
}

/// Classify each sample for the residual-ratio scan.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Presence {
    /// `h2 > 0`, or the residual is below the guard: no input present.
    Absent,
    /// `h2 <= 0`: an identifiable input dominates the residual.
    Present,
}

fn presence(
    obs: &ObservationSet,
    p0: &Array2<f64>,
    agent: usize,
    k: usize,
    l: f64,
    guard: f64,
) -> Presence {
    let prediction = p0.row(agent).dot(&obs.state(k - 1));
    let den = obs.state(k)[agent] - prediction;
    // A residual at the prediction-error floor means the estimate explains
    // the step; the sample supports no input decision.
    if den.abs() < guard {
        return Presence::Absent;
    }
    let num = prediction - obs.state(k - 1)[agent];
    if (num / den).abs() <= l {
        Presence::Present
    } else {
        Presence::Absent
    }
}

/// Locate every injected agent given the pre-injection matrix estimate: for
/// each agent the injection step is the first `k0 >= k_uq` whose sample
/// shows no input while the next one does.
///
/// The decision guard for each agent is raised from the bare noise level to
/// the prediction-error floor observed on that agent's clean prefix; the
/// initial matrix estimate carries error, so prediction residuals near
/// consensus sit at that floor rather than at machine precision and would
/// otherwise read as spurious injections.
pub fn identify_injected_set(
    obs: &ObservationSet,
    p_hat0: &Array2<f64>,
    l: f64,
    q: usize,
    k_uq: usize,
) -> Result<IdentificationResult> {
    let k_max = obs.k_max();
    if q >= obs.n() || k_uq < 2 || k_uq >= k_max {
        return Err(Error::InvalidParameter(format!(
            "initial injection (agent {q}, step {k_uq}) out of range"
        )));
    }
    if p_hat0.dim() != (obs.n(), obs.n()) {
        return Err(Error::DimensionMismatch(format!(
            "estimate has shape {:?}, expected ({n}, {n})",
            p_hat0.dim(),
            n = obs.n()
        )));
    }
    let base_guard = noise_guard(obs);
    let mut injected = BTreeMap::new();
    injected.insert(q, k_uq);
    for agent in 0..obs.n() {
        if agent == q {
            continue;
        }
        let mut floor = 0.0f64;
        for k in 2..=k_uq {
            let prediction = p_hat0.row(agent).dot(&obs.state(k - 1));
            floor = floor.max((obs.state(k)[agent] - prediction).abs());
        }
        let guard = base_guard.max(1.5 * floor);
        for k0 in k_uq.max(2)..k_max {
            if presence(obs, p_hat0, agent, k0, l, guard) == Presence::Absent
                && presence(obs, p_hat0, agent, k0 + 1, l, guard) == Presence::Present
            {
                injected.insert(agent, k0);
                break;
            }
        }
    }
    Ok(IdentificationResult {
        classified_time_invariant: false,
        q: Some(q),
        k_uq: Some(k_uq),
        injected,
    })
}

/// Back the input signals out of the one-step prediction residuals:
/// `u_hat_j(m) = (z~_j(m+1) - P_[j] z~(m)) / eps` for every injected agent
/// and `m >= k_uj`, zero elsewhere. One row per agent, `K - 1` columns.
pub fn estimate_input(
    obs: &ObservationSet,
    p_hat_prev: &Array2<f64>,
    injected: &BTreeMap<usize, usize>,
) -> Result<Array2<f64>> {
    let n = obs.n();
    let k_max = obs.k_max();
    if p_hat_prev.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "estimate has shape {:?}, expected ({n}, {n})",
            p_hat_prev.dim()
        )));
    }
    let eps = obs.epsilon();
    let mut u_hat = Array2::<f64>::zeros((n, k_max - 1));
    for (&agent, &k_u) in injected {
        if agent >= n {
            return Err(Error::InvalidParameter(format!(
                "injected agent {agent} out of range"
            )));
        }
        for m in k_u.max(1)..k_max {
            let predicted = p_hat_prev.row(agent).dot(&obs.state(m));
            u_hat[[agent, m - 1]] = (obs.state(m + 1)[agent] - predicted) / eps;
        }
    }
    Ok(u_hat)
}

/// Linear least squares for the coefficients that enter the family linearly.
fn linear_fit(basis: &Array2<f64>, values: &Array1<f64>) -> Result<Array1<f64>> {
    let fit = basis
        .least_squares(values)
        .map_err(|e| Error::InvalidParameter(format!("linear fit failed: {e}")))?;
    Ok(fit.solution)
}

fn residual_norm(family: InputFamily, theta: &[f64; 3], ks: &[f64], values: &[f64]) -> f64 {
    metrics::family_residuals(family, theta, ks, values).norm_l2()
}

/// Fit the family coefficients to a tabulated signal over its window.
///
/// The polynomial family is a plain linear fit. The exponential family runs
/// a damped Gauss-Newton refinement from several decay-rate starts, each
/// seeded by the linear fit of the remaining two coefficients; the best
/// residual wins, with earlier (smaller) starts keeping ties, so a constant
/// signal comes back as `a = 0`, `b = smallest start`, `c = mean`.
pub fn fit_input_params(ks: &[f64], values: &[f64], family: InputFamily) -> Result<[f64; 3]> {
    if ks.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample points but {} values",
            ks.len(),
            values.len()
        )));
    }
    if ks.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 samples to fit 3 coefficients, got {}",
            ks.len()
        )));
    }
    let y = Array1::from_vec(values.to_vec());

    if family == InputFamily::Polynomial {
        let mut basis = Array2::<f64>::zeros((ks.len(), 3));
        for (i, &k) in ks.iter().enumerate() {
            basis[[i, 0]] = k * k;
            basis[[i, 1]] = k;
            basis[[i, 2]] = 1.0;
        }
        let sol = linear_fit(&basis, &y)?;
        let theta = [sol[0], sol[1], sol[2]];
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitDiverged);
        }
        return Ok(theta);
    }

    let mut best: Option<([f64; 3], f64)> = None;
    for &b0 in &DECAY_STARTS {
        let Ok(mut theta) = exponential_seed(b0, ks, &y) else {
            continue;
        };
        let mut best_residual = residual_norm(family, &theta, ks, values);
        if !best_residual.is_finite() {
            continue;
        }
        let mut damping = 1e-3;
        for _ in 0..60 {
            let Some(step) = gauss_newton_step(&theta, ks, values, damping) else {
                break;
            };
            let candidate = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let residual = residual_norm(family, &candidate, ks, values);
            if residual.is_finite() && residual < best_residual {
                theta = candidate;
                let improvement = best_residual - residual;
                best_residual = residual;
                damping = (damping / 3.0).max(1e-12);
                if improvement < 1e-14 * (1.0 + best_residual) {
                    break;
                }
            } else {
                damping *= 10.0;
                if damping > 1e8 {
                    break;
                }
            }
        }
        let better = match &best {
            Some((_, r)) => best_residual < *r - 1e-12 * (1.0 + r.abs()),
            None => true,
        };
        if better {
            best = Some((theta, best_residual));
        }
    }
    best.map(|(theta, _)| theta).ok_or(Error::FitDiverged)
}

/// Linear fit of `(a, c)` at a fixed decay rate.
fn exponential_seed(b0: f64, ks: &[f64], y: &Array1<f64>) -> Result<[f64; 3]> {
    let mut basis = Array2::<f64>::zeros((ks.len(), 2));
    for (i, &k) in ks.iter().enumerate() {
        basis[[i, 0]] = (-b0 * k).exp();
        basis[[i, 1]] = 1.0;
    }
    let sol = linear_fit(&basis, y)?;
    let theta = [sol[0], b0, sol[1]];
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged);
    }
    Ok(theta)
}

/// One damped normal-equations step for the exponential family.
fn gauss_newton_step(
    theta: &[f64; 3],
    ks: &[f64],
    values: &[f64],
    damping: f64,
) -> Option<[f64; 3]> {
    let [a, b, _c] = *theta;
    let m = ks.len();
    let mut jtj = [[0.0f64; 3]; 3];
    let mut jtr = [0.0f64; 3];
    for i in 0..m {
        let k = ks[i];
        let e = (-b * k).exp();
        let row = [e, -a * k * e, 1.0];
        let r = a * e + theta[2] - values[i];
        for p in 0..3 {
            for q in 0..3 {
                jtj[p][q] += row[p] * row[q];
            }
            jtr[p] -= row[p] * r;
        }
    }
    for p in 0..3 {
        jtj[p][p] += damping * (1.0 + jtj[p][p]);
    }
    solve_3x3(&jtj, &jtr)
}

fn solve_3x3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let x = [
        inv * (b[0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (b[1] * a[2][2] - a[1][2] * b[2])
            + a[0][2] * (b[1] * a[2][1] - a[1][1] * b[2])),
        inv * (a[0][0] * (b[1] * a[2][2] - a[1][2] * b[2])
            - b[0] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * b[2] - b[1] * a[2][0])),
        inv * (a[0][0] * (a[1][1] * b[2] - b[1] * a[2][1])
            - a[0][1] * (a[1][0] * b[2] - b[1] * a[2][0])
            + b[0] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])),
    ];
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Rebuild the input-free series from the fitted inputs: observations are
/// kept verbatim up to each agent's injection, the first affected sample has
/// the fitted input subtracted, and later samples follow the estimated
/// transition recursion.
pub fn reconstruct_filtered(
    obs: &ObservationSet,
    p_hat_prev: &Array2<f64>,
    estimates: &[Option<AgentInput>],
    family: InputFamily,
) -> Result<Array2<f64>> {
    let n = obs.n();
    let k_max = obs.k_max();
    if estimates.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {n} agents",
            estimates.len()
        )));
    }
    if p_hat_prev.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "estimate has shape {:?}, expected ({n}, {n})",
            p_hat_prev.dim()
        )));
    }
    let eps = obs.epsilon();
    let mut out = Array2::<f64>::zeros((n, k_max));
    for k in 1..=k_max {
        for j in 0..n {
            let value = match &estimates[j] {
                None => obs.state(k)[j],
                Some(fit) => {
                    let k_u = fit.injection_time;
                    if k <= k_u {
                        obs.state(k)[j]
                    } else if k == k_u + 1 {
                        obs.state(k)[j] - eps * family.eval(&fit.theta, k_u as f64)
                    } else {
                        p_hat_prev.row(j).dot(&out.column(k - 2))
                    }
                }
            };
            out[[j, k - 1]] = value;
        }
    }
    Ok(out)
}

/// Crude identifiability bound from early increments: 1.5 times the largest
/// per-step change over the first `prefix_len` observations. Only a
/// fallback; pass the bound explicitly whenever it is known.
pub fn estimate_lipschitz(obs: &ObservationSet, prefix_len: usize) -> f64 {
    let upto = prefix_len.clamp(2, obs.k_max());
    let mut largest = 0.0f64;
    for k in 2..=upto {
        let inc = &obs.state(k) - &obs.state(k - 1);
        largest = largest.max(inc.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    1.5 * largest.max(1e-6)
}

/// Initial estimate from the pre-injection prefix `z~(1..k_uq)`: the full
/// two-layer fit when the prefix is long enough to excite every mode, a
/// weighted one-layer fit (no power terms) otherwise.
fn initial_estimate(
    obs: &ObservationSet,
    k_uq: usize,
    config: &IeTiaConfig,
) -> Result<(Array2<f64>, f64)> {
    let n = obs.n();
    let prefix = obs.states().slice(ndarray::s![.., ..k_uq]).to_owned();
    let rho = config.rho.unwrap_or_else(|| totia::default_rho(&prefix));
    if k_uq <= n {
        let schedule = solver::weight_schedule(k_uq - 1, WeightKind::Ws1);
        let mut problem = RegressionProblem::new(n).with_rho(rho);
        for k in 0..k_uq - 1 {
            problem.add_snapshot(
                prefix.column(k).to_owned(),
                prefix.column(k + 1).to_owned(),
                schedule.weights()[k],
            )?;
        }
        let report =
            solver::solve(&problem, &config.solver).map_err(|e| e.at_stage("initial-estimate"))?;
        Ok((report.solution, rho))
    } else {
        let s_cap = config
            .s_max
            .unwrap_or(totia::DEFAULT_MAX_POWER_LAYERS)
            .min(k_uq - n)
            .max(1);
        let (powers, _) = totia::power_ladder(&prefix, s_cap, &config.solver)?;
        let report = totia::second_layer(
            &prefix,
            &powers,
            rho,
            config.beta,
            config.beta_normalize,
            config.weight_kind,
            &config.solver,
        )
        .map_err(|e| e.at_stage("initial-estimate"))?;
        Ok((report.solution, rho))
    }
}

/// Fit every injected agent's window; agents whose window is too short fall
/// back to a constant model at the sample mean.
fn fit_all(
    u_hat: &Array2<f64>,
    injected: &BTreeMap<usize, usize>,
    family: InputFamily,
) -> Result<Vec<Option<AgentInput>>> {
    let n = u_hat.nrows();
    let sample_max = u_hat.ncols(); // generation steps 1..=sample_max
    let mut estimates: Vec<Option<AgentInput>> = vec![None; n];
    for (&agent, &k_u) in injected {
        let lo = k_u.max(1);
        if lo > sample_max {
            continue;
        }
        let ks: Vec<f64> = (lo..=sample_max).map(|m| m as f64).collect();
        let values: Vec<f64> = (lo..=sample_max).map(|m| u_hat[[agent, m - 1]]).collect();
        let theta = if ks.len() < 3 {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            [0.0, DECAY_STARTS[0], mean]
        } else {
            fit_input_params(&ks, &values, family).map_err(|e| e.at_stage("input-fit"))?
        };
        estimates[agent] = Some(AgentInput {
            injection_time: k_u,
            theta,
        });
    }
    Ok(estimates)
}

/// Run the full identification-plus-iteration pipeline.
///
/// A trajectory with no injection pattern is rejected with
/// [`Error::TimeInvariantInput`]; the time-invariant pipeline should be run
/// instead. Hitting the iteration cap is not an error: the trace carries
/// [`TerminationStatus::MaxIterations`] and the last iterate is returned.
pub fn ie_tia(
    obs: &ObservationSet,
    config: &IeTiaConfig,
) -> Result<(InferenceResult, IterationTrace)> {
    let n = obs.n();
    let k_max = obs.k_max();
    if k_max < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 observations, got {k_max}"
        )));
    }
    if config.delta_d <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "termination tolerance must be positive, got {}",
            config.delta_d
        )));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidParameter("need max_iter >= 1".into()));
    }

    let l = config
        .lipschitz
        .unwrap_or_else(|| estimate_lipschitz(obs, k_max / 2));

    let Some((q, k_uq)) = identify_initial_injection(obs, l, config.min_consecutive)
        .map_err(|e| e.at_stage("identification"))?
    else {
        return Err(Error::TimeInvariantInput);
    };

    let (p0, rho) = initial_estimate(obs, k_uq, config)?;
    let identification =
        identify_injected_set(obs, &p0, l, q, k_uq).map_err(|e| e.at_stage("identification"))?;

    let s_cap_full = config
        .s_max
        .unwrap_or(totia::DEFAULT_MAX_POWER_LAYERS)
        .min(k_max.saturating_sub(n))
        .max(1);

    let mut p_prev = p0;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut termination = TerminationStatus::MaxIterations;
    let mut last_powers = BTreeMap::new();
    let mut last_dropped = Vec::new();
    let mut last_summary: Option<SolveSummary> = None;

    for _ in 1..=config.max_iter {
        let u_hat = estimate_input(obs, &p_prev, &identification.injected)?;
        let estimates = fit_all(&u_hat, &identification.injected, config.family)?;
        let z_phi = reconstruct_filtered(obs, &p_prev, &estimates, config.family)?;

        let (powers, dropped) = if k_max > n {
            totia::power_ladder(&z_phi, s_cap_full, &config.solver)?
        } else {
            (BTreeMap::new(), Vec::new())
        };
        let beta = if powers.is_empty() { 0.0 } else { config.beta };
        let report = totia::second_layer(
            &z_phi,
            &powers,
            rho,
            beta,
            config.beta_normalize,
            config.weight_kind,
            &config.solver,
        )
        .map_err(|e| e.at_stage("iteration-regression"))?;
        if !report.converged {
            return Err(Error::SolverStalled {
                iterations: report.iterations,
                primal: report.primal_residual,
                dual: report.dual_residual,
            }
            .at_stage("iteration-regression"));
        }
        let p_i = report.solution.clone();

        let psi_d = metrics::iteration_difference(&p_i, &p_prev)?;
        let fitting = metrics::fitting_error(&u_hat, &estimates, config.family, k_max)?;
        records.push(IterationRecord {
            psi_d,
            p_hat: p_i.clone(),
            input_estimates: estimates,
            u_hat,
            fitting_error: fitting,
        });
        last_powers = powers;
        last_dropped = dropped;
        last_summary = Some(SolveSummary::from(&report));

        p_prev = p_i;
        if psi_d < config.delta_d {
            termination = TerminationStatus::Converged;
            break;
        }
    }

    let last = records.last().expect("max_iter >= 1 guarantees a record");
    let result = InferenceResult {
        p_hat: last.p_hat.clone(),
        intermediate: last_powers,
        diagnostics: Diagnostics {
            k_eps: None,
            c: None,
            r: None,
            eps_tol: None,
            weight_kind: config.weight_kind,
            rho,
            beta: config.beta,
            dropped_layers: last_dropped,
            final_solve: last_summary.expect("at least one iteration ran"),
        },
        iterations: records.len(),
        input_estimates: last.input_estimates.clone(),
    };
    let trace = IterationTrace {
        records,
        termination,
        identification,
    };
    Ok((result, trace))
}
