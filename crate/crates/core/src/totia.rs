//! End-to-end topology inference for time-invariant latent inputs.
//!
//! Pipeline: detect the steady period, estimate and subtract the input's
//! drift/offset signature, then fit the interaction matrix with a two-layer
//! scheme. The first layer estimates each `s`-step transition matrix from
//! the filtered series; the second layer solves the weighted, L1-regularized
//! regression over consecutive pairs with consistency penalties
//! `||P_hat^s - P * P_hat^{s-1}||_F^2` tying the powers together.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::Norm;

use crate::dynamics::{AgentInput, ObservationSet};
use crate::error::{Error, Result};
use crate::separation;
use crate::solver::{self, RegressionProblem, SolverConfig, SolverReport, WeightKind};

/// Hard cap on the number of power layers; high powers of a contraction are
/// numerically near rank one and add noise rather than information.
pub const DEFAULT_MAX_POWER_LAYERS: usize = 10;

/// Configuration of the time-invariant pipeline.
#[derive(Debug, Clone)]
pub struct ToTiaConfig {
    /// L1 weight; `None` scales `1e-3 * ||series||_F / n` from the data.
    pub rho: Option<f64>,
    /// Weight of the power-consistency terms, in `(0, 1]`.
    pub beta: f64,
    /// Divide `beta` by the number of consistency terms.
    pub beta_normalize: bool,
    /// Snapshot weight placement (decreasing by default).
    pub weight_kind: WeightKind,
    /// Steady-period detection tolerance; `None` derives it from the noise
    /// level.
    pub eps_tol: Option<f64>,
    /// Cap on the power-layer ladder; `None` means `min(K - n, 10)`.
    pub s_max: Option<usize>,
    pub solver: SolverConfig,
}

impl Default for ToTiaConfig {
    fn default() -> Self {
        Self {
            rho: None,
            beta: 0.5,
            beta_normalize: false,
            weight_kind: WeightKind::Ws1,
            eps_tol: None,
            s_max: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Summary of the final regression solve.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective_value: f64,
}

impl From<&SolverReport> for SolveSummary {
    fn from(report: &SolverReport) -> Self {
        Self {
            iterations: report.iterations,
            converged: report.converged,
            primal_residual: report.primal_residual,
            dual_residual: report.dual_residual,
            objective_value: report.objective_value,
        }
    }
}

/// Stage-by-stage details of one inference run.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Detected start of the steady window (absent for pipelines that skip
    /// the filtering stage).
    pub k_eps: Option<usize>,
    /// Estimated drift rate per unit time.
    pub c: Option<f64>,
    /// Estimated reference-relative offsets.
    pub r: Option<Array1<f64>>,
    /// Detection tolerance actually used.
    pub eps_tol: Option<f64>,
    pub weight_kind: WeightKind,
    pub rho: f64,
    pub beta: f64,
    /// Power layers dropped for rank deficiency.
    pub dropped_layers: Vec<usize>,
    pub final_solve: SolveSummary,
}

/// Estimated interaction matrix plus everything needed to audit the run.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub p_hat: Array2<f64>,
    /// First-layer estimates, keyed by power.
    pub intermediate: BTreeMap<usize, Array2<f64>>,
    pub diagnostics: Diagnostics,
    /// Outer iterations performed (1 for the time-invariant pipeline).
    pub iterations: usize,
    /// Fitted per-agent input estimates (empty here; filled by the
    /// time-varying pipeline).
    pub input_estimates: Vec<Option<AgentInput>>,
}

/// Data-derived default L1 weight.
pub(crate) fn default_rho(series: &Array2<f64>) -> f64 {
    1e-3 * series.norm_l2() / series.nrows() as f64
}

/// Fit the power ladder `s = 1..=s_cap` on a series, dropping layers whose
/// design is rank deficient.
pub(crate) fn power_ladder(
    series: &Array2<f64>,
    s_cap: usize,
    config: &SolverConfig,
) -> Result<(BTreeMap<usize, Array2<f64>>, Vec<usize>)> {
    let mut powers = BTreeMap::new();
    let mut dropped = Vec::new();
    for s in 1..=s_cap {
        let report = solver::solve_power_layer(series, s, config)
            .map_err(|e| e.at_stage("power-layer"))?;
        if report.rank_warning {
            dropped.push(s);
        } else {
            powers.insert(s, report.solution);
        }
    }
    Ok((powers, dropped))
}

/// Assemble and solve the second-layer regression over a series.
pub(crate) fn second_layer(
    series: &Array2<f64>,
    powers: &BTreeMap<usize, Array2<f64>>,
    rho: f64,
    beta: f64,
    beta_normalize: bool,
    weight_kind: WeightKind,
    solver_config: &SolverConfig,
) -> Result<SolverReport> {
    let n = series.nrows();
    let m = series.ncols();
    let schedule = solver::weight_schedule(m - 1, weight_kind);

    let term_count = powers
        .keys()
        .filter(|&&s| s == 1 || powers.contains_key(&(s - 1)))
        .count();
    let beta_eff = if beta_normalize && term_count > 0 {
        beta / term_count as f64
    } else {
        beta
    };

    let mut problem = RegressionProblem::new(n).with_rho(rho).with_beta(beta_eff);
    for k in 0..m - 1 {
        problem.add_snapshot(
            series.column(k).to_owned(),
            series.column(k + 1).to_owned(),
            schedule.weights()[k],
        )?;
    }
    if beta > 0.0 {
        for (&s, p_s) in powers {
            // Anchor each power against its predecessor; a dropped layer
            // breaks the chain for its successor as well.
            let previous = if s == 1 {
                Some(Array2::eye(n))
            } else {
                powers.get(&(s - 1)).cloned()
            };
            if let Some(prev) = previous {
                problem.add_frobenius(p_s.clone(), prev)?;
            }
        }
    }
    solver::solve(&problem, solver_config)
}

fn run(obs: &ObservationSet, config: &ToTiaConfig, skip_powers: bool) -> Result<InferenceResult> {
    let n = obs.n();
    let k_max = obs.k_max();
    if k_max < n + 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least n + 2 = {} observations, got {k_max}",
            n + 2
        )));
    }

    let eps_tol = config
        .eps_tol
        .unwrap_or_else(|| separation::default_eps_tol(obs));
    let k_eps = separation::detect_convergence_time(obs, eps_tol)
        .map_err(|e| e.at_stage("steady-detection"))?;
    let (c, r) =
        separation::estimate_drift_offset(obs, k_eps).map_err(|e| e.at_stage("drift-offset"))?;
    let z0_hat = separation::filter_time_invariant_input(obs, c, &r)
        .map_err(|e| e.at_stage("input-filter"))?;

    let (powers, dropped) = if skip_powers {
        (BTreeMap::new(), Vec::new())
    } else {
        let s_cap = config
            .s_max
            .unwrap_or(DEFAULT_MAX_POWER_LAYERS)
            .min(k_max - n)
            .max(1);
        power_ladder(&z0_hat, s_cap, &config.solver)?
    };

    let rho = config.rho.unwrap_or_else(|| default_rho(&z0_hat));
    let beta = if skip_powers { 0.0 } else { config.beta };
    let report = second_layer(
        &z0_hat,
        &powers,
        rho,
        beta,
        config.beta_normalize,
        config.weight_kind,
        &config.solver,
    )
    .map_err(|e| e.at_stage("final-regression"))?;
    if !report.converged {
        return Err(Error::SolverStalled {
            iterations: report.iterations,
            primal: report.primal_residual,
            dual: report.dual_residual,
        }
        .at_stage("final-regression"));
    }

    Ok(InferenceResult {
        p_hat: report.solution.clone(),
        intermediate: powers,
        diagnostics: Diagnostics {
            k_eps: Some(k_eps),
            c: Some(c),
            r: Some(r),
            eps_tol: Some(eps_tol),
            weight_kind: config.weight_kind,
            rho,
            beta,
            dropped_layers: dropped,
            final_solve: SolveSummary::from(&report),
        },
        iterations: 1,
        input_estimates: Vec::new(),
    })
}

/// Full two-layer pipeline for a time-invariant latent input.
pub fn to_tia(obs: &ObservationSet, config: &ToTiaConfig) -> Result<InferenceResult> {
    run(obs, config, false)
}

/// Ablation: no power-consistency terms (`beta = 0`), otherwise identical.
pub fn baseline_a1(obs: &ObservationSet, config: &ToTiaConfig) -> Result<InferenceResult> {
    run(obs, config, true)
}

/// Ablation: increasing snapshot weights.
pub fn baseline_a2(obs: &ObservationSet, config: &ToTiaConfig) -> Result<InferenceResult> {
    let config = ToTiaConfig {
        weight_kind: WeightKind::Ws2,
        ..config.clone()
    };
    run(obs, &config, false)
}

/// Ablation: uniform snapshot weights.
pub fn baseline_a3(obs: &ObservationSet, config: &ToTiaConfig) -> Result<InferenceResult> {
    let config = ToTiaConfig {
        weight_kind: WeightKind::Ws3,
        ..config.clone()
    };
    run(obs, &config, false)
}
