//! Consensus-network simulation and directed topology inference.
//!
//! The crate simulates discrete observations of a linear consensus process
//! running on a weighted digraph while an unmeasurable latent input drives
//! some of the agents, and recovers the directed interaction matrix from a
//! single noisy trajectory.
//!
//! Two inference pipelines are provided:
//!
//! * [`totia::to_tia`] handles time-invariant inputs. It detects the steady
//!   period of the trajectory, estimates the drift/offset signature of the
//!   input, filters it out, and solves a two-layer constrained regression
//!   (per-power least squares followed by a weighted, L1-regularized fit).
//! * [`ietia::ie_tia`] handles time-varying inputs. It locates the injected
//!   agents and injection times from increment ratios, then alternates
//!   between estimating the input signals and re-fitting the interaction
//!   matrix until consecutive iterates agree.
//!
//! Supporting modules: [`graph`] (generation and spectral analysis of the
//! ground-truth network), [`dynamics`] (trajectory simulation and
//! closed-form oracles), [`separation`] (steady-period detection and input
//! filtering), [`solver`] (row-stochastic constrained lasso), [`metrics`]
//! (error criteria), and [`io`] (CSV/JSON interchange).

// Linked for LAPACK symbols; also pins the feature set that keeps
// openblas-build compiling against the system library.
use openblas_src as _;

pub mod dynamics;
pub mod error;
pub mod graph;
pub mod ietia;
pub mod io;
pub mod metrics;
pub mod separation;
pub mod solver;
pub mod totia;

pub use dynamics::{
    AgentInput, InputFamily, InputKind, LatentInputModel, ObservationSet, SeparatedState,
};
pub use error::{Error, Result};
pub use graph::{InteractionMatrix, SpectralData, WeightedDigraph};
pub use ietia::{IdentificationResult, IeTiaConfig, IterationTrace, TerminationStatus};
pub use metrics::ErrorReport;
pub use separation::SteadyStateEstimate;
pub use solver::{RegressionProblem, SolverConfig, SolverReport, WeightKind, WeightSchedule};
pub use totia::{InferenceResult, ToTiaConfig};
