//! Trajectory generation for the consensus process and closed-form oracles.
//!
//! The continuous model `dz/dt = -L z + u` is realized through its exact
//! Euler step `z(k) = P z(k-1) + eps * u(k-1)` with `P = I - eps * L`;
//! observations are the true states plus i.i.d. Gaussian noise, so the noise
//! never feeds back into the dynamics. Generation-time indices are plain
//! integers: `u(k)` drives the transition from state `k` to state `k+1`, and
//! the stored observations are `z~(1), ..., z~(K)`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionMatrix, SpectralData};

/// Time behavior of the latent input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    TimeInvariant,
    TimeVarying,
}

/// Three-parameter signal families used for generation and fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFamily {
    /// `u(k; a, b, c) = a * exp(-b k) + c`
    Exponential,
    /// `u(k; a, b, c) = a k^2 + b k + c`
    Polynomial,
}

impl InputFamily {
    pub fn eval(&self, theta: &[f64; 3], k: f64) -> f64 {
        let [a, b, c] = *theta;
        match self {
            InputFamily::Exponential => a * (-b * k).exp() + c,
            InputFamily::Polynomial => a * k * k + b * k + c,
        }
    }
}

/// Per-agent input description: the first generation step at which the
/// signal is nonzero plus its family coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentInput {
    pub injection_time: usize,
    pub theta: [f64; 3],
}

/// Latent input signals for all agents. Signals are zero before their
/// injection time and absent agents are identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentInputModel {
    n: usize,
    kind: InputKind,
    family: InputFamily,
    inputs: Vec<Option<AgentInput>>,
    lipschitz_bound: f64,
}

impl LatentInputModel {
    /// No input at all (a degenerate time-invariant model).
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            kind: InputKind::TimeInvariant,
            family: InputFamily::Exponential,
            inputs: vec![None; n],
            lipschitz_bound: 1.0,
        }
    }

    /// Constant per-agent input, active from step 0.
    pub fn constant(u: &Array1<f64>) -> Self {
        let inputs = u
            .iter()
            .map(|&c| {
                if c == 0.0 {
                    None
                } else {
                    Some(AgentInput {
                        injection_time: 0,
                        theta: [0.0, 0.0, c],
                    })
                }
            })
            .collect();
        Self {
            n: u.len(),
            kind: InputKind::TimeInvariant,
            family: InputFamily::Exponential,
            inputs,
            lipschitz_bound: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> InputKind {
        self.kind
    }

    pub fn family(&self) -> InputFamily {
        self.family
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn agent_inputs(&self) -> &[Option<AgentInput>] {
        &self.inputs
    }

    /// Signal value for one agent at generation step `k`.
    pub fn value(&self, agent: usize, k: usize) -> f64 {
        match &self.inputs[agent] {
            Some(input) if k >= input.injection_time => self.family.eval(&input.theta, k as f64),
            _ => 0.0,
        }
    }

    /// Stacked input vector `u(k)`.
    pub fn vector(&self, k: usize) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |j| self.value(j, k))
    }

    /// Agents with a nonzero signal, ascending.
    pub fn injected_set(&self) -> Vec<usize> {
        self.inputs
            .iter()
            .enumerate()
            .filter_map(|(j, i)| i.map(|_| j))
            .collect()
    }

    /// Injection time of an agent, if it is injected.
    pub fn injection_time(&self, agent: usize) -> Option<usize> {
        self.inputs[agent].map(|i| i.injection_time)
    }
}

/// `K` noisy state observations of one trajectory, stored column-wise:
/// column `k - 1` holds `z~(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    states: Array2<f64>,
    epsilon: f64,
    noise_sigma: f64,
    seed: u64,
}

impl ObservationSet {
    pub fn new(states: Array2<f64>, epsilon: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive, got {epsilon}"
            )));
        }
        if states.ncols() < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 observations".into(),
            ));
        }
        Ok(Self {
            states,
            epsilon,
            noise_sigma,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    /// Number of stored observations `K`.
    pub fn k_max(&self) -> usize {
        self.states.ncols()
    }

    /// Observation `z~(k)` for `k` in `1..=K`.
    pub fn state(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        assert!(
            k >= 1 && k <= self.k_max(),
            "observation index {k} out of 1..={}",
            self.k_max()
        );
        self.states.column(k - 1)
    }

    /// All observations as an `n x K` matrix.
    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Run the discrete consensus process from `z_init` for `k_max` steps and
/// observe each state under i.i.d. `N(0, sigma^2)` noise per entry.
/// Deterministic for a fixed seed; with `sigma = 0` the stored vectors
/// satisfy the recursion exactly.
pub fn simulate(
    p: &InteractionMatrix,
    z_init: &Array1<f64>,
    input: &LatentInputModel,
    k_max: usize,
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    let n = p.n();
    if z_init.len() != n || input.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "interaction matrix is {n}x{n}, initial state has {} entries, input model has {}",
            z_init.len(),
            input.n()
        )));
    }
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!(
            "need k_max >= 2, got {k_max}"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise level must be nonnegative, got {sigma}"
        )));
    }

    let eps = p.epsilon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("sigma validated"))
    } else {
        None
    };

    let mut states = Array2::<f64>::zeros((n, k_max));
    let mut z = z_init.clone();
    for k in 1..=k_max {
        z = p.matrix().dot(&z) + eps * &input.vector(k - 1);
        let mut col = states.column_mut(k - 1);
        col.assign(&z);
        if let Some(normal) = &normal {
            for v in col.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    ObservationSet::new(states, eps, sigma, seed)
}

/// Decomposition of the continuous state at time `t` into the part driven by
/// the initial condition and the part driven by a constant input, plus the
/// input mode vector `m` that fixes the steady-state offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedState {
    pub z0_part: Array1<f64>,
    pub zu_part: Array1<f64>,
    pub m_vector: Array1<f64>,
}

impl SeparatedState {
    pub fn total(&self) -> Array1<f64> {
        &self.z0_part + &self.zu_part
    }
}

fn real_part_checked(v: Array1<Complex64>, what: &str) -> Result<Array1<f64>> {
    let imag = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    let scale = 1.0 + v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if imag > 1e-8 * scale {
        return Err(Error::DefectiveMatrix(format!(
            "imaginary residual {imag:.3e} in {what}; eigenbasis too ill-conditioned"
        )));
    }
    Ok(v.mapv(|z| z.re))
}

fn projection(spec: &SpectralData, i: usize, x: &Array1<Complex64>) -> Complex64 {
    spec.left_vectors()
        .column(i)
        .iter()
        .zip(x.iter())
        .map(|(w, x)| w * x)
        .sum()
}

/// Closed-form state of `dz/dt = -L z + u` at time `t` for constant `u`,
/// split into initial-condition and input-driven parts.
pub fn closed_form_state(
    spec: &SpectralData,
    z_init: &Array1<f64>,
    u: &Array1<f64>,
    t: f64,
) -> Result<SeparatedState> {
    let n = spec.n();
    if z_init.len() != n || u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "spectral data is for {n} agents, got state {} and input {}",
            z_init.len(),
            u.len()
        )));
    }
    let zc = z_init.mapv(|x| Complex64::new(x, 0.0));
    let uc = u.mapv(|x| Complex64::new(x, 0.0));

    let mut z0 = Array1::<Complex64>::zeros(n);
    let mut damp = Array1::<Complex64>::zeros(n);
    let mut m = Array1::<Complex64>::zeros(n);

    let w1z = projection(spec, 0, &zc);
    let w1u = projection(spec, 0, &uc);
    for r in 0..n {
        z0[r] = w1z; // v_1 is the ones vector
    }

    for i in 1..n {
        let lam = spec.eigenvalues()[i];
        let decay = (-lam * t).exp();
        let wz = projection(spec, i, &zc);
        let wu = projection(spec, i, &uc);
        let v = spec.right_vectors().column(i);
        for r in 0..n {
            z0[r] += decay * v[r] * wz;
            m[r] += v[r] * wu / lam;
            damp[r] += decay * v[r] * wu / lam;
        }
    }

    let m_real = real_part_checked(m.clone(), "input mode vector")?;
    let zu = Array1::from_shape_fn(n, |r| w1u * t + m[r] - damp[r]);
    Ok(SeparatedState {
        z0_part: real_part_checked(z0, "initial-condition part")?,
        zu_part: real_part_checked(zu, "input-driven part")?,
        m_vector: m_real,
    })
}

/// Steady drift rate of a constant input: the first left eigenvector applied
/// to `u`.
pub fn drift_rate(spec: &SpectralData, u: &Array1<f64>) -> Result<f64> {
    if u.len() != spec.n() {
        return Err(Error::DimensionMismatch(format!(
            "spectral data is for {} agents, input has {}",
            spec.n(),
            u.len()
        )));
    }
    let uc = u.mapv(|x| Complex64::new(x, 0.0));
    let c = projection(spec, 0, &uc);
    if c.im.abs() > 1e-8 * (1.0 + c.norm()) {
        return Err(Error::DefectiveMatrix(format!(
            "drift rate has imaginary residual {:.3e}",
            c.im
        )));
    }
    Ok(c.re)
}

/// Attempts allowed when rescaling a signal toward identifiability.
const IDENTIFIABILITY_ATTEMPTS: usize = 10;

/// Build a time-varying input model whose signals are detectable from the
/// nominal (noise-free) trajectory started at `z_init`.
///
/// Each injected agent `j` must satisfy the identifiability inequality
/// `|z_j(k+1) - z_j(k)| < l * eps * |u_j(k)|` at its injection step `k`;
/// failing signals have their amplitude doubled (both `a` and `c`) and the
/// trajectory is re-simulated, up to [`IDENTIFIABILITY_ATTEMPTS`] times.
///
/// Note the inequality bounds the ratio of the state increment to the scaled
/// input by `l`; it accepts inputs that are large relative to the natural
/// increments so the injection is visible in the observations.
pub fn make_time_varying_input(
    p: &InteractionMatrix,
    z_init: &Array1<f64>,
    injected: &[(usize, usize)],
    family: InputFamily,
    family_params: &[(f64, f64, f64)],
    l: f64,
) -> Result<LatentInputModel> {
    let n = p.n();
    if z_init.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "interaction matrix is {n}x{n}, initial state has {} entries",
            z_init.len()
        )));
    }
    if l <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "identifiability bound must be positive, got {l}"
        )));
    }
    if injected.is_empty() {
        return Ok(LatentInputModel::zero(n));
    }
    if injected.len() != family_params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} injected agents but {} parameter triples",
            injected.len(),
            family_params.len()
        )));
    }

    let mut inputs: Vec<Option<AgentInput>> = vec![None; n];
    for (&(agent, k_u), &(a, b, c)) in injected.iter().zip(family_params.iter()) {
        if agent >= n {
            return Err(Error::InvalidParameter(format!(
                "injected agent {agent} out of range for {n} agents"
            )));
        }
        if k_u < 2 {
            return Err(Error::InvalidParameter(format!(
                "injection time must be at least 2, got {k_u} for agent {agent}"
            )));
        }
        if inputs[agent].is_some() {
            return Err(Error::InvalidParameter(format!(
                "agent {agent} injected twice"
            )));
        }
        inputs[agent] = Some(AgentInput {
            injection_time: k_u,
            theta: [a, b, c],
        });
    }

    let mut model = LatentInputModel {
        n,
        kind: InputKind::TimeVarying,
        family,
        inputs,
        lipschitz_bound: l,
    };

    let horizon = injected.iter().map(|&(_, k)| k).max().unwrap() + 2;
    let eps = p.epsilon();
    for attempt in 0..=IDENTIFIABILITY_ATTEMPTS {
        let obs = simulate(p, z_init, &model, horizon, 0.0, 0)?;
        let mut failing: Vec<usize> = Vec::new();
        for &(agent, k_u) in injected {
            let increment = obs.state(k_u + 1)[agent] - obs.state(k_u)[agent];
            let scaled_input = eps * model.value(agent, k_u);
            if increment.abs() >= l * scaled_input.abs() {
                failing.push(agent);
            }
        }
        if failing.is_empty() {
            return Ok(model);
        }
        if attempt == IDENTIFIABILITY_ATTEMPTS {
            return Err(Error::InfeasibleInput {
                agent: failing[0],
                attempts: IDENTIFIABILITY_ATTEMPTS,
            });
        }
        for agent in failing {
            if let Some(input) = model.inputs[agent].as_mut() {
                input.theta[0] *= 2.0;
                input.theta[2] *= 2.0;
            }
        }
    }
    unreachable!("rescaling loop returns or errors");
}
