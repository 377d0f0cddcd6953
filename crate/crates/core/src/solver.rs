//! Row-stochastic constrained least squares with optional L1 regularization.
//!
//! All regression problems solved here share one shape: find a matrix `P`
//! minimizing a weighted sum of snapshot residuals `alpha_k ||y_k - P x_k||^2`
//! plus consistency penalties `beta ||A_s - P B_s||_F^2` plus a row-wise L1
//! term `rho sum_i ||P_[i]||_1`, subject to every row of `P` summing to one.
//!
//! The problem separates by row, and every row shares the same quadratic
//! form `Q = sum_k alpha_k x_k x_k^T + beta sum_s B_s B_s^T`. The row-sum
//! constraint is eliminated by parametrizing the last entry, `p = e_n + Z q`
//! with `Z = [e_1 - e_n, ..., e_{n-1} - e_n]`, which keeps iterates feasible
//! to machine precision.
//!
//! Without the L1 term the reduced normal equations are solved directly
//! (minimum-norm solution when the design is rank deficient). With it, an
//! operator-splitting iteration alternates the quadratic step in reduced
//! coordinates with elementwise soft thresholding in full coordinates and a
//! scaled dual update; the penalty parameter is rebalanced from the residuals
//! during an initial burn-in window. The returned matrix always comes from
//! the constrained iterate, so feasibility never depends on convergence.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Factorize, Norm, Solve, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for rank decisions (condition 1e12).
const RANK_TOL: f64 = 1e-12;

/// Iteration window during which the penalty parameter may be rebalanced.
const PENALTY_TUNING_WINDOW: usize = 200;

/// Weight placement over the empirical-risk terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// Strictly decreasing: early snapshots dominate.
    Ws1,
    /// Strictly increasing: late snapshots dominate.
    Ws2,
    /// Uniform.
    Ws3,
}

impl WeightKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightKind::Ws1 => "ws1",
            WeightKind::Ws2 => "ws2",
            WeightKind::Ws3 => "ws3",
        }
    }
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ws1" => Ok(WeightKind::Ws1),
            "ws2" => Ok(WeightKind::Ws2),
            "ws3" => Ok(WeightKind::Ws3),
            other => Err(Error::InvalidParameter(format!(
                "unknown weight kind {other:?}; expected ws1, ws2, or ws3"
            ))),
        }
    }
}

/// Normalized weights `alpha_1..alpha_h` over a snapshot horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    kind: WeightKind,
    weights: Vec<f64>,
}

impl WeightSchedule {
    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Linear ramp schedules normalized to sum one: decreasing for `Ws1`
/// (`alpha_k` proportional to `h - k + 1`), its mirror for `Ws2`, uniform for
/// `Ws3`.
pub fn weight_schedule(horizon: usize, kind: WeightKind) -> WeightSchedule {
    assert!(horizon >= 1, "weight schedule needs a positive horizon");
    let h = horizon as f64;
    let total = h * (h + 1.0) / 2.0;
    let weights = (1..=horizon)
        .map(|k| match kind {
            WeightKind::Ws1 => (h - k as f64 + 1.0) / total,
            WeightKind::Ws2 => k as f64 / total,
            WeightKind::Ws3 => 1.0 / h,
        })
        .collect();
    WeightSchedule { kind, weights }
}

/// One weighted snapshot residual `alpha ||y - P x||^2`.
#[derive(Debug, Clone)]
struct SnapshotTerm {
    x: Array1<f64>,
    y: Array1<f64>,
    weight: f64,
}

/// One consistency penalty `beta ||A - P B||_F^2`.
#[derive(Debug, Clone)]
struct FrobeniusTerm {
    a: Array2<f64>,
    b: Array2<f64>,
}

/// Assembled convex problem over row-stochastic matrices.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    n: usize,
    snapshots: Vec<SnapshotTerm>,
    frobenius: Vec<FrobeniusTerm>,
    rho: f64,
    beta: f64,
}

impl RegressionProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            snapshots: Vec::new(),
            frobenius: Vec::new(),
            rho: 0.0,
            beta: 0.5,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn term_count(&self) -> usize {
        self.snapshots.len() + self.frobenius.len()
    }

    pub fn add_snapshot(&mut self, x: Array1<f64>, y: Array1<f64>, weight: f64) -> Result<()> {
        if x.len() != self.n || y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "snapshot pair has lengths {} and {}, expected {}",
                x.len(),
                y.len(),
                self.n
            )));
        }
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "snapshot weight must be finite and nonnegative, got {weight}"
            )));
        }
        self.snapshots.push(SnapshotTerm { x, y, weight });
        Ok(())
    }

    pub fn add_frobenius(&mut self, a: Array2<f64>, b: Array2<f64>) -> Result<()> {
        if a.dim() != (self.n, self.n) || b.dim() != (self.n, self.n) {
            return Err(Error::DimensionMismatch(format!(
                "consistency term has shapes {:?} and {:?}, expected ({n}, {n})",
                a.dim(),
                b.dim(),
                n = self.n
            )));
        }
        self.frobenius.push(FrobeniusTerm { a, b });
        Ok(())
    }

    /// Shared quadratic form, per-row linear parts, and the constant so that
    /// the objective is `sum_i (p_i^T Q p_i - 2 b_i^T p_i) + constant`.
    fn assemble(&self) -> (Array2<f64>, Array2<f64>, f64) {
        let n = self.n;
        let mut q = Array2::<f64>::zeros((n, n));
        let mut lin = Array2::<f64>::zeros((n, n));
        let mut constant = 0.0;
        for term in &self.snapshots {
            let w = term.weight;
            for r in 0..n {
                for c in 0..n {
                    q[[r, c]] += w * term.x[r] * term.x[c];
                    lin[[r, c]] += w * term.y[r] * term.x[c];
                }
            }
            constant += w * term.y.iter().map(|v| v * v).sum::<f64>();
        }
        for term in &self.frobenius {
            let bbt = term.b.dot(&term.b.t());
            let abt = term.a.dot(&term.b.t());
            q += &(self.beta * &bbt);
            lin += &(self.beta * &abt);
            constant += self.beta * term.a.iter().map(|v| v * v).sum::<f64>();
        }
        (q, lin, constant)
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Outcome of one solve.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub solution: Array2<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    /// Design rank fell short of full; the minimum-norm solution was taken.
    pub rank_warning: bool,
    /// Objective evaluated at the constrained iterate, one entry per
    /// iteration (single entry for direct solves).
    pub objective_trace: Vec<f64>,
}

/// Basis of the affine constraint: columns `e_j - e_n`.
fn reduced_basis(n: usize) -> Array2<f64> {
    let mut z = Array2::<f64>::zeros((n, n - 1));
    for j in 0..n - 1 {
        z[[j, j]] = 1.0;
        z[[n - 1, j]] = -1.0;
    }
    z
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Quadratic {
    q: Array2<f64>,
    lin: Array2<f64>,
    constant: f64,
    z: Array2<f64>,
    /// `Z^T Q Z`
    g: Array2<f64>,
    /// Row `i` holds `Z^T (b_i - Q e_n)`.
    h: Array2<f64>,
}

impl Quadratic {
    fn build(problem: &RegressionProblem) -> Self {
        let n = problem.n;
        let (q, lin, constant) = problem.assemble();
        let z = reduced_basis(n);
        let g = z.t().dot(&q).dot(&z);
        let q_last = q.column(n - 1).to_owned();
        let mut h = Array2::<f64>::zeros((n, n - 1));
        for i in 0..n {
            let diff = &lin.row(i).to_owned() - &q_last;
            h.row_mut(i).assign(&z.t().dot(&diff));
        }
        Quadratic {
            q,
            lin,
            constant,
            z,
            g,
            h,
        }
    }

    fn n(&self) -> usize {
        self.q.nrows()
    }

    /// Map reduced coordinates (rows of `qmat`) back to feasible rows.
    fn lift(&self, qmat: &Array2<f64>) -> Array2<f64> {
        let n = self.n();
        let mut p = qmat.dot(&self.z.t());
        for i in 0..n {
            p[[i, n - 1]] += 1.0;
        }
        p
    }

    /// Smooth part of the objective at a feasible `P`.
    fn quadratic_value(&self, p: &Array2<f64>) -> f64 {
        let mut value = self.constant;
        for i in 0..self.n() {
            let row = p.row(i);
            value += row.dot(&self.q.dot(&row)) - 2.0 * self.lin.row(i).dot(&row);
        }
        value
    }

    fn objective(&self, p: &Array2<f64>, rho: f64) -> f64 {
        self.quadratic_value(p) + rho * p.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Minimize the smooth problem exactly; minimum-norm rows when the reduced
/// normal matrix is rank deficient.
fn solve_smooth(quad: &Quadratic) -> Result<(Array2<f64>, bool)> {
    let n = quad.n();
    let (eigs, basis) = quad
        .g
        .eigh(UPLO::Lower)
        .map_err(|e| Error::InvalidParameter(format!("normal-matrix eigendecomposition: {e}")))?;
    let s_max = eigs.iter().cloned().fold(0.0, f64::max).max(0.0);
    let keep: Vec<usize> = (0..eigs.len())
        .filter(|&j| eigs[j] > RANK_TOL * s_max && eigs[j] > 0.0)
        .collect();
    let deficient = keep.len() < n - 1;

    let mut qmat = Array2::<f64>::zeros((n, n - 1));
    for i in 0..n {
        let h = quad.h.row(i);
        let mut qrow = Array1::<f64>::zeros(n - 1);
        for &j in &keep {
            let u = basis.column(j);
            let coeff = u.dot(&h) / eigs[j];
            qrow.scaled_add(coeff, &u);
        }
        qmat.row_mut(i).assign(&qrow);
    }

    if deficient {
        // Among the minimizers, pick the row of least Euclidean norm: adjust
        // along the null directions of the reduced normal matrix.
        let null: Vec<usize> = (0..eigs.len()).filter(|j| !keep.contains(j)).collect();
        if !null.is_empty() {
            let mut un = Array2::<f64>::zeros((n - 1, null.len()));
            for (col, &j) in null.iter().enumerate() {
                un.column_mut(col).assign(&basis.column(j));
            }
            let b = quad.z.dot(&un); // n x d, full column rank
            let btb = b.t().dot(&b);
            let factor = btb
                .factorize()
                .map_err(|e| Error::InvalidParameter(format!("null-space factorization: {e}")))?;
            for i in 0..n {
                let mut p_row = quad.z.dot(&qmat.row(i));
                p_row[n - 1] += 1.0;
                let rhs = -b.t().dot(&p_row);
                let coeffs = factor
                    .solve(&rhs)
                    .map_err(|e| Error::InvalidParameter(format!("null-space solve: {e}")))?;
                let mut qrow = qmat.row(i).to_owned();
                qrow += &un.dot(&coeffs);
                qmat.row_mut(i).assign(&qrow);
            }
        }
    }

    Ok((quad.lift(&qmat), deficient))
}

/// Solve the assembled problem to the configured tolerance.
///
/// The returned matrix satisfies the row-sum constraint to machine precision
/// regardless of convergence; `converged` reports whether the splitting
/// residuals fell below tolerance within the iteration budget. A report with
/// `converged == false` still carries the best iterate.
pub fn solve(problem: &RegressionProblem, config: &SolverConfig) -> Result<SolverReport> {
    if problem.n < 2 {
        return Err(Error::InvalidParameter(
            "regression needs at least 2 agents".into(),
        ));
    }
    if problem.term_count() == 0 {
        return Err(Error::InvalidParameter(
            "regression problem has no terms".into(),
        ));
    }
    if problem.rho < 0.0 || !problem.rho.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rho must be finite and nonnegative, got {}",
            problem.rho
        )));
    }
    if !problem.frobenius.is_empty() && !(problem.beta > 0.0 && problem.beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in (0, 1], got {}",
            problem.beta
        )));
    }
    if config.tol <= 0.0 || config.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "solver needs tol > 0 and max_iter >= 1".into(),
        ));
    }

    let quad = Quadratic::build(problem);
    let n = problem.n;

    let (p0, rank_warning) = solve_smooth(&quad)?;
    if problem.rho == 0.0 {
        let objective_value = quad.objective(&p0, 0.0);
        return Ok(SolverReport {
            objective_value,
            iterations: 1,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            rank_warning,
            objective_trace: vec![objective_value],
            solution: p0,
        });
    }

    let rho = problem.rho;
    let mut mu = (quad.q.norm_l2() / n as f64).max(1e-6);
    let zt_z = quad.z.t().dot(&quad.z);
    let mut factor = (2.0 * &quad.g + mu * &zt_z)
        .factorize()
        .map_err(|e| Error::InvalidParameter(format!("penalty factorization: {e}")))?;

    let mut p = p0.clone();
    let mut w = p0;
    let mut y = Array2::<f64>::zeros((n, n));
    let mut trace = Vec::with_capacity(config.max_iter.min(4096));
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=config.max_iter {
        iterations = iter;

        // Quadratic step in reduced coordinates, one shared factorization.
        for i in 0..n {
            let target = &w.row(i) - &y.row(i);
            let mut rhs = 2.0 * &quad.h.row(i).to_owned();
            let mut shifted = target.to_owned();
            shifted[n - 1] -= 1.0;
            rhs += &(mu * &quad.z.t().dot(&shifted));
            let q_row = factor
                .solve(&rhs)
                .map_err(|e| Error::InvalidParameter(format!("penalty solve: {e}")))?;
            let mut p_row = quad.z.dot(&q_row);
            p_row[n - 1] += 1.0;
            p.row_mut(i).assign(&p_row);
        }

        // Shrinkage and scaled dual update.
        let w_prev = w.clone();
        for i in 0..n {
            for j in 0..n {
                w[[i, j]] = soft_threshold(p[[i, j]] + y[[i, j]], rho / mu);
            }
        }
        y += &(&p - &w);

        primal = (&p - &w).norm_l2();
        dual = mu * (&w - &w_prev).norm_l2();
        trace.push(quad.objective(&p, rho));

        let scale_p = p.norm_l2().max(w.norm_l2()).max(1.0);
        let scale_d = (mu * y.norm_l2()).max(1.0);
        if primal <= config.tol * scale_p && dual <= config.tol * scale_d {
            converged = true;
            break;
        }

        if iter <= PENALTY_TUNING_WINDOW && iter % 10 == 0 {
            let mut changed = false;
            if primal > 10.0 * dual {
                mu *= 2.0;
                y.mapv_inplace(|v| v / 2.0);
                changed = true;
            } else if dual > 10.0 * primal {
                mu /= 2.0;
                y.mapv_inplace(|v| v * 2.0);
                changed = true;
            }
            if changed {
                factor = (2.0 * &quad.g + mu * &zt_z).factorize().map_err(|e| {
                    Error::InvalidParameter(format!("penalty refactorization: {e}"))
                })?;
            }
        }
    }

    let objective_value = quad.objective(&p, rho);
    Ok(SolverReport {
        solution: p,
        objective_value,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        rank_warning,
        objective_trace: trace,
    })
}

/// Fit the `s`-step transition matrix of a series: unweighted, unregularized
/// least squares over the pairs `(z(k), z(k + s))` under the row-sum
/// constraint. A rank-deficient design is reported through `rank_warning`
/// and resolved by the minimum-norm tie-break.
pub fn solve_power_layer(
    series: &Array2<f64>,
    s: usize,
    config: &SolverConfig,
) -> Result<SolverReport> {
    let m = series.ncols();
    if s == 0 {
        return Err(Error::InvalidParameter(
            "power step must be positive".into(),
        ));
    }
    if m <= s {
        return Err(Error::InvalidParameter(format!(
            "series has {m} columns; need more than {s} for step {s}"
        )));
    }
    let mut problem = RegressionProblem::new(series.nrows());
    for k in 0..m - s {
        problem.add_snapshot(
            series.column(k).to_owned(),
            series.column(k + s).to_owned(),
            1.0,
        )?;
    }
    solve(&problem, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row_sum_gap(p: &Array2<f64>) -> f64 {
        p.rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_schedule() {
        let ws = weight_schedule(3, WeightKind::Ws3);
        assert_eq!(ws.weights(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn decreasing_schedule_is_a_normalized_ramp() {
        let ws = weight_schedule(3, WeightKind::Ws1);
        assert_eq!(ws.weights(), &[0.5, 2.0 / 6.0, 1.0 / 6.0]);
    }

    #[test]
    fn degenerate_horizon() {
        for kind in [WeightKind::Ws1, WeightKind::Ws2, WeightKind::Ws3] {
            assert_eq!(weight_schedule(1, kind).weights(), &[1.0]);
        }
    }

    fn random_row_stochastic(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            for v in &mut row {
                *v /= s;
            }
            for j in 0..n {
                p[[i, j]] = row[j];
            }
        }
        p
    }

    #[test]
    fn zero_residual_consistency_term_returns_the_anchor() {
        let p0 = random_row_stochastic(4, 1);
        let mut problem = RegressionProblem::new(4).with_beta(0.5);
        problem.add_frobenius(p0.clone(), Array2::eye(4)).unwrap();
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert!((&report.solution - &p0).norm_l2() < 1e-10);
        assert!(report.objective_value.abs() < 1e-12);
    }

    #[test]
    fn noiseless_snapshots_recover_the_generator() {
        let p0 = random_row_stochastic(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut problem = RegressionProblem::new(4);
        let mut x = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        for _ in 0..8 {
            let y = p0.dot(&x);
            problem.add_snapshot(x.clone(), y.clone(), 1.0).unwrap();
            x = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        }
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!((&report.solution - &p0).norm_l2() < 1e-6);
        assert!(row_sum_gap(&report.solution) < 1e-8);
    }

    /// Exhaustive scan over the one free parameter of each constrained row of
    /// a 2x2 problem.
    fn grid_minimum_2x2(problem: &RegressionProblem) -> f64 {
        let quad = Quadratic::build(problem);
        let mut total = quad.constant;
        for i in 0..2 {
            let mut best = f64::INFINITY;
            let mut t = -3.0;
            while t <= 4.0 {
                let row = array![t, 1.0 - t];
                let smooth = row.dot(&quad.q.dot(&row)) - 2.0 * quad.lin.row(i).dot(&row);
                let value = smooth + problem.rho * (row[0].abs() + row[1].abs());
                if value < best {
                    best = value;
                }
                t += 1e-3;
            }
            total += best;
        }
        total
    }

    #[test]
    fn large_shrinkage_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let mut problem = RegressionProblem::new(2).with_rho(3.0 + trial as f64);
            for _ in 0..6 {
                let x = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
                let y = Array1::from_shape_fn(2, |_| rng.gen_range(-1.0..1.0));
                problem.add_snapshot(x, y, 1.0).unwrap();
            }
            let report = solve(&problem, &SolverConfig::default()).unwrap();
            let grid = grid_minimum_2x2(&problem);
            assert!(
                report.objective_value <= grid + 1e-3,
                "trial {trial}: solver {} vs grid {grid}",
                report.objective_value
            );
            assert!(row_sum_gap(&report.solution) < 1e-8);
        }
    }

    #[test]
    fn one_step_power_layer_recovers_the_generator() {
        let p0 = random_row_stochastic(3, 5);
        let mut series = Array2::<f64>::zeros((3, 7));
        let mut z = array![1.0, -0.5, 0.25];
        for k in 0..7 {
            series.column_mut(k).assign(&z);
            z = p0.dot(&z);
        }
        let report = solve_power_layer(&series, 1, &SolverConfig::default()).unwrap();
        assert!((&report.solution - &p0).norm_l2() < 1e-8);
        assert!(!report.rank_warning);
    }

    #[test]
    fn two_step_power_layer_recovers_the_square() {
        let p0 = random_row_stochastic(3, 6);
        let mut series = Array2::<f64>::zeros((3, 8));
        let mut z = array![1.0, -0.5, 0.25];
        for k in 0..8 {
            series.column_mut(k).assign(&z);
            z = p0.dot(&z);
        }
        let report = solve_power_layer(&series, 2, &SolverConfig::default()).unwrap();
        let expected = p0.dot(&p0);
        assert!(
            (&report.solution - &expected).norm_l2() < 1e-6,
            "gap {}",
            (&report.solution - &expected).norm_l2()
        );
    }

    #[test]
    fn constant_series_raises_the_rank_warning() {
        let mut series = Array2::<f64>::zeros((3, 6));
        for k in 0..6 {
            series.column_mut(k).assign(&array![1.0, 1.0, 1.0]);
        }
        let report = solve_power_layer(&series, 1, &SolverConfig::default()).unwrap();
        assert!(report.rank_warning);
        assert!(row_sum_gap(&report.solution) < 1e-8);
    }

    #[test]
    fn shrinkage_support_is_monotone_in_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p0 = random_row_stochastic(3, 12);
        let mut pairs = Vec::new();
        let mut x = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        for _ in 0..10 {
            let y = p0.dot(&x) + Array1::from_shape_fn(3, |_| rng.gen_range(-0.05..0.05));
            pairs.push((x.clone(), y));
            x = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        }
        let tau = 0.02;
        let mut previous = usize::MAX;
        for rho in [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let mut problem = RegressionProblem::new(3).with_rho(rho);
            for (x, y) in &pairs {
                problem.add_snapshot(x.clone(), y.clone(), 0.1).unwrap();
            }
            let report = solve(&problem, &SolverConfig::default()).unwrap();
            let nnz = report.solution.iter().filter(|v| v.abs() > tau).count();
            assert!(
                nnz <= previous,
                "support grew from {previous} to {nnz} at rho = {rho}"
            );
            previous = nnz;
        }
    }

    #[test]
    fn objective_trace_is_monotone_after_burn_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p0 = random_row_stochastic(4, 14);
        let mut problem = RegressionProblem::new(4).with_rho(0.05);
        let mut x = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        for _ in 0..12 {
            let y = p0.dot(&x) + Array1::from_shape_fn(4, |_| rng.gen_range(-0.02..0.02));
            problem.add_snapshot(x.clone(), y, 1.0).unwrap();
            x = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        }
        let report = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        let trace = &report.objective_trace;
        let burn_in = (trace.len() / 4).max(PENALTY_TUNING_WINDOW.min(trace.len() / 2));
        for t in burn_in + 1..trace.len() {
            assert!(
                trace[t] <= trace[t - 1] + 1e-9 * (1.0 + trace[t - 1].abs()),
                "objective rose at iteration {t}: {} -> {}",
                trace[t - 1],
                trace[t]
            );
        }
    }

    #[test]
    fn empty_problem_is_rejected() {
        let problem = RegressionProblem::new(3);
        assert!(solve(&problem, &SolverConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solutions_stay_row_stochastic(
            seed in 0u64..500,
            rho in 0.0f64..0.5,
            pairs in 4usize..10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let mut problem = RegressionProblem::new(n).with_rho(rho);
            for _ in 0..pairs {
                let x = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
                let y = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
                problem.add_snapshot(x, y, 1.0).unwrap();
            }
            let report = solve(&problem, &SolverConfig::default()).unwrap();
            prop_assert!(row_sum_gap(&report.solution) < 1e-8);
        }

        #[test]
        fn schedules_are_normalized_and_ordered(
            horizon in 1usize..40,
        ) {
            for kind in [WeightKind::Ws1, WeightKind::Ws2, WeightKind::Ws3] {
                let ws = weight_schedule(horizon, kind);
                let total: f64 = ws.weights().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                for pair in ws.weights().windows(2) {
                    match kind {
                        WeightKind::Ws1 => prop_assert!(pair[0] > pair[1]),
                        WeightKind::Ws2 => prop_assert!(pair[0] < pair[1]),
                        WeightKind::Ws3 => prop_assert!((pair[0] - pair[1]).abs() < 1e-15),
                    }
                }
            }
        }
    }
}
