//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The eigenvector basis is numerically rank deficient, typically because
    /// two eigenvalues coincide. Spectral routines refuse to continue instead
    /// of building generalized eigenchains.
    #[error("defective matrix: {0}")]
    DefectiveMatrix(String),

    /// The trajectory never settles within the scanned range; extend the
    /// horizon or raise the detection tolerance.
    #[error("no steady period found in k = 2..={scanned} at tolerance {tol:.3e}")]
    NotConverged { scanned: usize, tol: f64 },

    #[error("rank-deficient design (condition estimate {cond:.3e}); not enough excitation")]
    RankDeficient { cond: f64 },

    #[error("solver stopped after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e})")]
    SolverStalled {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    /// Increment below the noise guard; the sample supports no detection
    /// decision.
    #[error("denominator {value:.3e} below guard {guard:.3e} at step {k}")]
    DegenerateDenominator { k: usize, value: f64, guard: f64 },

    #[error("input for agent {agent} not identifiable after {attempts} rescalings")]
    InfeasibleInput { agent: usize, attempts: usize },

    #[error("curve fit diverged for every start value")]
    FitDiverged,

    /// No injection pattern was found: the latent input is time-invariant and
    /// the time-invariant pipeline should be used instead.
    #[error("latent input classified as time-invariant; use the time-invariant pipeline")]
    TimeInvariantInput,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, unwrapping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
