//! Simulator for differentially-private decentralized nonconvex optimization.
//!
//! Agents on an undirected graph share a single blended message
//! `w_ij (x_j - λ (g_j + n_j))` per link; the injected Gaussian noise `n_j`
//! both yields per-iteration (ε, δ)-differential privacy and pushes the
//! network away from saddle points and maxima.
//!
//! Modules:
//! - [`topology`]: graphs, Metropolis mixing matrices, spectral gap.
//! - [`problems`]: objective interface plus the decentralized estimation and
//!   ICA benchmarks.
//! - [`optimizer`]: stepsize schedules, seeded noise and the iteration loop.
//! - [`privacy`]: sensitivities and Gaussian-mechanism calibration.
//! - [`analysis`]: metrics, the contraction check and coupling experiments.
//! - [`config`] / [`experiments`]: serializable run descriptions and the
//!   batch drivers used by the CLI.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod privacy;
pub mod problems;
pub mod rng;
pub mod topology;

pub use analysis::{consensus_error, AnalysisError, CouplingResult, MetricRow};
pub use optimizer::{AgentState, NoiseSpec, OptimizerError, RunTrace, StepsizeSchedule};
pub use privacy::{PrivacyBudget, PrivacyTarget, SensitivityInputs};
pub use problems::{Problem, ProblemError, StationaryKind};
pub use topology::{Graph, TopologyError, WeightMatrix};
