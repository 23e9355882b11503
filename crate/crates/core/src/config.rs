//! JSON run descriptions.
//!
//! Unknown keys are rejected. Every config serializes back to an equivalent
//! structure, and its SHA-256 over the compact serialization is the run
//! fingerprint.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::optimizer::{Algorithm, InitMode, NoiseSpec, OptimizerError, RunSetup, StepsizeSchedule};
use crate::privacy::PrivacyError;
use crate::problems::{make_ica_problem, make_paper_estimation_problem, CustomQuadratic, Problem, ProblemError};
use crate::topology::{
    build_metropolis_weights, builtin_graph, weight_matrix_from_rows, BuiltinTopology, Graph, TopologyError,
    WeightMatrix,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("InvalidConfig: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl ConfigError {
    /// Whether the failure is numerical divergence rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            ConfigError::Optimizer(OptimizerError::NonFiniteState { .. })
                | ConfigError::Analysis(AnalysisError::Optimizer(OptimizerError::NonFiniteState { .. }))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Five-agent estimation benchmark.
    EstimationPaper,
    Ica {
        dim: usize,
        agents: usize,
        samples_per_agent: usize,
        seed: u64,
    },
    CustomQuadratic {
        diag: Vec<f64>,
        centers: Vec<Vec<f64>>,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Arc<dyn Problem>, ConfigError> {
        Ok(match self {
            ProblemSpec::EstimationPaper => Arc::new(make_paper_estimation_problem()),
            ProblemSpec::Ica { dim, agents, samples_per_agent, seed } => {
                Arc::new(make_ica_problem(*dim, *agents, *samples_per_agent, *seed)?)
            }
            ProblemSpec::CustomQuadratic { diag, centers } => {
                Arc::new(CustomQuadratic::new(diag.clone(), centers.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Builtin {
        name: BuiltinTopology,
        agents: usize,
    },
    /// Undirected edge list with Metropolis weights.
    Edges {
        agents: usize,
        edges: Vec<(usize, usize)>,
    },
    /// Explicit mixing matrix, one row per agent.
    Matrix {
        rows: Vec<Vec<f64>>,
    },
}

impl TopologySpec {
    pub fn build(&self) -> Result<WeightMatrix, TopologyError> {
        match self {
            TopologySpec::Builtin { name, agents } => build_metropolis_weights(&builtin_graph(*name, *agents)?),
            TopologySpec::Edges { agents, edges } => {
                build_metropolis_weights(&Graph::new(*agents, edges.iter().copied())?)
            }
            TopologySpec::Matrix { rows } => weight_matrix_from_rows(rows),
        }
    }
}

fn default_record_every() -> usize {
    1
}

fn default_trace() -> String {
    "trace.csv".into()
}

fn default_summary() -> String {
    "summary.json".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOutput {
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

impl Default for RunOutput {
    fn default() -> Self {
        Self { trace: default_trace(), summary: default_summary() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub schedule: StepsizeSchedule,
    /// Per-coordinate noise variance.
    pub variance: f64,
    pub iterations: usize,
    pub init: InitMode,
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub output: RunOutput,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 {
            return Err(ConfigError::Invalid("iterations must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(ConfigError::Invalid("record_every must be >= 1".into()));
        }
        self.schedule.validate()?;
        NoiseSpec::new(self.variance, self.seed)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    /// Resolve into an executable setup, constructing the problem.
    pub fn build(&self) -> Result<RunSetup, ConfigError> {
        self.build_with(self.problem.build()?, self.topology.build()?)
    }

    /// Resolve with a prebuilt problem and weight matrix.
    pub fn build_with(&self, problem: Arc<dyn Problem>, weights: WeightMatrix) -> Result<RunSetup, ConfigError> {
        self.validate()?;
        let setup = RunSetup {
            problem,
            weights,
            schedule: self.schedule.clone(),
            noise: NoiseSpec::new(self.variance, self.seed)?,
            iterations: self.iterations,
            init: self.init.clone(),
            seed: self.seed,
            record_every: self.record_every,
            keep_states: false,
            algorithm: self.algorithm,
            fingerprint: self.fingerprint(),
        };
        setup.validate()?;
        Ok(setup)
    }
}

fn default_variances() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
}

fn default_runs_per_cell() -> usize {
    100
}

fn default_sweep_output() -> String {
    "table1.csv".into()
}

/// Variance sweep over a base run; each cell aggregates the final mean
/// optimization error over `runs_per_cell` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default = "default_variances")]
    pub variances: Vec<f64>,
    #[serde(default = "default_runs_per_cell")]
    pub runs_per_cell: usize,
    #[serde(default = "default_sweep_output")]
    pub output: String,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.base.validate()?;
        if self.runs_per_cell == 0 {
            return Err(ConfigError::Invalid("runs_per_cell must be >= 1".into()));
        }
        if self.variances.is_empty() {
            return Err(ConfigError::Invalid("variances must not be empty".into()));
        }
        for v in &self.variances {
            NoiseSpec::new(*v, 0)?;
        }
        Ok(())
    }
}

fn default_escape_radius() -> f64 {
    0.5
}

fn default_coupling_output() -> String {
    "coupling.json".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub schedule: StepsizeSchedule,
    pub variance: f64,
    pub runs: usize,
    pub horizon: usize,
    #[serde(default = "default_escape_radius")]
    pub escape_radius: f64,
    pub seed: u64,
    /// Defaults to the problem's refined saddle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saddle: Option<Vec<f64>>,
    #[serde(default = "default_coupling_output")]
    pub output: String,
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs == 0 || self.horizon == 0 {
            return Err(ConfigError::Invalid("runs and horizon must be >= 1".into()));
        }
        if !(self.escape_radius > 0.0) {
            return Err(ConfigError::Invalid("escape_radius must be positive".into()));
        }
        self.schedule.validate()?;
        NoiseSpec::new(self.variance, self.seed)?;
        Ok(())
    }
}

fn default_privacy_output() -> String {
    "privacy.csv".into()
}

/// Per-iteration privacy report. `nu` and `samples_per_agent` fall back to
/// the problem's constants when a problem is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub schedule: StepsizeSchedule,
    pub variance: f64,
    pub delta: f64,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_agent: Option<usize>,
    #[serde(default = "default_privacy_output")]
    pub output: String,
}

impl PrivacyConfig {
    /// `(ν, n_i)` used by the report.
    pub fn resolve_inputs(&self) -> Result<(f64, usize), ConfigError> {
        if self.horizon == 0 {
            return Err(ConfigError::Invalid("horizon must be >= 1".into()));
        }
        self.schedule.validate()?;
        let problem = match (&self.problem, self.nu, self.samples_per_agent) {
            (_, Some(nu), Some(n)) => return Ok((nu, n)),
            (Some(spec), _, _) => spec.build()?,
            _ => {
                return Err(ConfigError::Invalid(
                    "privacy config needs a problem or both nu and samples_per_agent".into(),
                ))
            }
        };
        let c = problem.constants();
        let nu = match self.nu.or(c.nu) {
            Some(nu) => nu,
            None => {
                return Err(ConfigError::Invalid(format!(
                    "problem '{}' has no gradient Lipschitz bound",
                    problem.name()
                )))
            }
        };
        let n = self.samples_per_agent.unwrap_or_else(|| c.samples_per_agent.iter().copied().min().unwrap_or(1));
        Ok((nu, n))
    }
}

/// SHA-256 hex digest of the compact JSON serialization.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config types always serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_json(&text)
}
