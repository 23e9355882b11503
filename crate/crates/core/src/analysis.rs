//! Metrics on agent states, the consensus contraction check, and the
//! coupled-trajectory saddle-escape experiment.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{dist, norm};
use crate::optimizer::{step_with_noise, AgentState, Algorithm, NoiseSpec, OptimizerError, RunTrace, StepsizeSchedule};
use crate::problems::{
    aggregated_gradient, classify_stationary_point, feasible_hessian_eigen, Problem, ProblemError, StationaryKind,
};
use crate::rng::child_seed;
use crate::topology::WeightMatrix;

/// Slack added to the right-hand side of the contraction inequality.
pub const CONTRACTION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("MissingPerAgentData: {0}")]
    MissingPerAgentData(String),
    #[error("NotAStrictSaddle: point {point:?} classified as {kind}")]
    NotAStrictSaddle { point: Vec<f64>, kind: StationaryKind },
    #[error("invalid experiment parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub k: usize,
    /// `‖x − 1 ⊗ x̄‖`
    pub consensus_error: f64,
    pub opt_error_mean: f64,
    pub opt_error_max: f64,
    /// `‖∇F(x̄)‖`
    pub grad_norm_mean: f64,
}

/// Stacked deviation of the agents from their mean.
pub fn consensus_error(state: &AgentState) -> f64 {
    let mean = state.mean();
    state.x.row_iter().map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>().sqrt()
}

pub fn metric_row(p: &dyn Problem, state: &AgentState) -> Result<MetricRow, ProblemError> {
    let errors: Vec<f64> = (0..state.agents()).map(|i| p.optimization_error(&state.agent(i))).collect();
    Ok(MetricRow {
        k: state.k,
        consensus_error: consensus_error(state),
        opt_error_mean: errors.iter().sum::<f64>() / errors.len() as f64,
        opt_error_max: errors.iter().copied().fold(0.0, f64::max),
        grad_norm_mean: norm(&aggregated_gradient(p, &state.mean())?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionViolation {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub checked_pairs: usize,
    pub violations: usize,
    pub first_violation: Option<ContractionViolation>,
}

/// Check `‖x^{k+1} − 1⊗x̄^{k+1}‖ ≤ η‖x^k − 1⊗x̄^k‖ + η λ^{k+1} ‖g^{k+1} + N^{k+1}‖`
/// on every pair of consecutive records.
///
/// Each record carries the stepsize and `‖g + N‖` of the step that produced
/// it, so the pair `(k, k+1)` is checked with the later record's values.
pub fn assert_contraction(trace: &RunTrace, w: &WeightMatrix) -> Result<ContractionReport, AnalysisError> {
    let eta = w.eta();
    let mut report = ContractionReport { checked_pairs: 0, violations: 0, first_violation: None };
    for pair in trace.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.k() != a.k() + 1 {
            continue;
        }
        let (Some(xa), Some(xb)) = (&a.states, &b.states) else {
            return Err(AnalysisError::MissingPerAgentData(format!("no per-agent states at k = {}", a.k())));
        };
        let lhs = consensus_error(&AgentState { x: xb.clone(), k: b.k() });
        let prev = consensus_error(&AgentState { x: xa.clone(), k: a.k() });
        let rhs = eta * prev + eta * b.lambda * b.drive_norm + CONTRACTION_SLACK;
        report.checked_pairs += 1;
        if lhs > rhs {
            report.violations += 1;
            report.first_violation.get_or_insert(ContractionViolation { k: b.k(), lhs, rhs });
        }
    }
    if report.checked_pairs == 0 {
        return Err(AnalysisError::MissingPerAgentData("trace has no consecutive records".into()));
    }
    Ok(report)
}

/// Parameters of a coupling experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSettings {
    pub schedule: StepsizeSchedule,
    pub variance: f64,
    pub runs: usize,
    pub horizon: usize,
    pub escape_radius: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRun {
    pub run: usize,
    pub seed: u64,
    /// First iteration where either trajectory's mean left the ball.
    pub escape_iteration: Option<usize>,
    /// Final distance of each trajectory's mean to the problem's minimum.
    pub final_distance_to_minimum: Option<[f64; 2]>,
    /// Final consensus error of each trajectory.
    pub final_consensus_error: [f64; 2],
    /// Largest `‖(I − e₁e₁ᵀ)(N' − N'')‖` seen over the run.
    pub max_orthogonal_noise_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub escape_count: usize,
    pub total_runs: usize,
    pub escape_radius: f64,
    pub saddle: Vec<f64>,
    /// Unit eigenvector of the smallest Hessian eigenvalue at the saddle.
    pub e1: Vec<f64>,
    pub min_eigenvalue: f64,
    pub runs: Vec<CouplingRun>,
}

impl CouplingResult {
    pub fn escape_iterations(&self) -> Vec<Option<usize>> {
        self.runs.iter().map(|r| r.escape_iteration).collect()
    }
}

/// Smallest-eigenvalue direction of the Hessian at a strict saddle.
pub fn escape_direction(p: &dyn Problem, saddle: &[f64]) -> Result<(f64, Vec<f64>), AnalysisError> {
    let kind = classify_stationary_point(p, saddle, 1e-2, 1e-6)?;
    if kind != StationaryKind::StrictSaddle {
        return Err(AnalysisError::NotAStrictSaddle { point: saddle.to_vec(), kind });
    }
    let (values, vectors) = feasible_hessian_eigen(p, saddle)?;
    let e1 = vectors[0].normalize();
    Ok((values[0], e1.iter().copied().collect()))
}

/// Negate each agent's component along `e1`.
pub fn mirror_noise(noise: &DMatrix<f64>, e1: &[f64]) -> DMatrix<f64> {
    let e = DVector::from_column_slice(e1);
    let along = noise * &e;
    noise - along * e.transpose() * 2.0
}

/// State of both coupled trajectories after one iteration.
#[derive(Debug, Clone)]
pub struct CoupledStep {
    pub first: AgentState,
    pub second: AgentState,
    pub noise_first: DMatrix<f64>,
    pub noise_second: DMatrix<f64>,
}

/// One iteration of both trajectories with mirrored noise.
pub fn coupled_step(
    p: &dyn Problem,
    w: &WeightMatrix,
    first: &AgentState,
    second: &AgentState,
    lambda: f64,
    noise: &NoiseSpec,
    e1: &[f64],
) -> Result<CoupledStep, AnalysisError> {
    let k = first.k + 1;
    let n1 = noise.draw_all(first.agents(), k, first.dim());
    let n2 = mirror_noise(&n1, e1);
    let a = step_with_noise(first, w, p, lambda, n1.clone(), Algorithm::Private)?;
    let b = step_with_noise(second, w, p, lambda, n2.clone(), Algorithm::Private)?;
    Ok(CoupledStep { first: a.state, second: b.state, noise_first: n1, noise_second: n2 })
}

fn orthogonal_gap(diff: &DMatrix<f64>, e1: &[f64]) -> f64 {
    let e = DVector::from_column_slice(e1);
    let along = diff * &e;
    (diff - along * e.transpose()).norm()
}

fn coupled_run(
    p: &dyn Problem,
    w: &WeightMatrix,
    saddle: &[f64],
    e1: &[f64],
    settings: &CouplingSettings,
    run: usize,
) -> Result<CouplingRun, AnalysisError> {
    let seed = child_seed(settings.seed, run as u64);
    let noise = NoiseSpec::new(settings.variance, seed)?;
    let mut first = AgentState::uniform(p.agents(), saddle);
    let mut second = first.clone();
    let mut escape_iteration = None;
    let mut gap: f64 = 0.0;
    for k in 1..=settings.horizon {
        let s = coupled_step(p, w, &first, &second, settings.schedule.stepsize(k), &noise, e1)?;
        gap = gap.max(orthogonal_gap(&(&s.noise_first - &s.noise_second), e1));
        first = s.first;
        second = s.second;
        if escape_iteration.is_none()
            && (dist(&first.mean(), saddle) > settings.escape_radius
                || dist(&second.mean(), saddle) > settings.escape_radius)
        {
            escape_iteration = Some(k);
        }
    }
    let final_distance_to_minimum =
        p.minimum_point().map(|m| [dist(&first.mean(), &m.refined), dist(&second.mean(), &m.refined)]);
    Ok(CouplingRun {
        run,
        seed,
        escape_iteration,
        final_distance_to_minimum,
        final_consensus_error: [consensus_error(&first), consensus_error(&second)],
        max_orthogonal_noise_gap: gap,
    })
}

/// Paired trajectories from every agent at `saddle`, with per-agent noises
/// identical except for a negated component along `e1`.
pub fn run_coupling_experiment(
    p: &dyn Problem,
    w: &WeightMatrix,
    saddle: &[f64],
    settings: &CouplingSettings,
) -> Result<CouplingResult, AnalysisError> {
    if settings.runs == 0 || settings.horizon == 0 || !(settings.escape_radius > 0.0) {
        return Err(AnalysisError::InvalidParameter("runs, horizon and escape_radius must be positive".into()));
    }
    settings.schedule.validate()?;
    let (min_eigenvalue, e1) = escape_direction(p, saddle)?;
    let runs: Vec<CouplingRun> = (0..settings.runs)
        .into_par_iter()
        .map(|r| coupled_run(p, w, saddle, &e1, settings, r))
        .collect::<Result<_, _>>()?;
    Ok(CouplingResult {
        escape_count: runs.iter().filter(|r| r.escape_iteration.is_some()).count(),
        total_runs: settings.runs,
        escape_radius: settings.escape_radius,
        saddle: saddle.to_vec(),
        e1,
        min_eigenvalue,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeCell {
    pub variance: f64,
    pub stepsize: f64,
    /// Median escape iteration, censored runs counted as never escaping.
    pub median_escape: Option<f64>,
    pub escaped: usize,
    pub runs: usize,
}

/// Median of escape iterations with `None` treated as +∞.
pub fn censored_median(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<Option<usize>> = values.to_vec();
    sorted.sort_by_key(|v| v.unwrap_or(usize::MAX));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2].map(|v| v as f64)
    } else {
        Some((sorted[n / 2 - 1]? as f64 + sorted[n / 2]? as f64) / 2.0)
    }
}

/// Median escape iteration over a grid of noise variances and constant stepsizes.
#[allow(clippy::too_many_arguments)]
pub fn escape_iterations_vs_stepsize(
    p: &dyn Problem,
    w: &WeightMatrix,
    saddle: &[f64],
    variances: &[f64],
    stepsizes: &[f64],
    runs: usize,
    horizon: usize,
    escape_radius: f64,
    seed: u64,
) -> Result<Vec<EscapeCell>, AnalysisError> {
    let mut table = Vec::new();
    for &variance in variances {
        for &stepsize in stepsizes {
            let settings = CouplingSettings {
                schedule: StepsizeSchedule::constant(stepsize),
                variance,
                runs,
                horizon,
                escape_radius,
                seed,
            };
            let result = run_coupling_experiment(p, w, saddle, &settings)?;
            table.push(EscapeCell {
                variance,
                stepsize,
                median_escape: censored_median(&result.escape_iterations()),
                escaped: result.escape_count,
                runs,
            });
        }
    }
    Ok(table)
}
