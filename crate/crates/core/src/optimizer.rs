//! The single-variable-sharing update and its run loop.
//!
//! Each agent `j` broadcasts `v_ij = w_ij (x_j − λ^k (g_j + n_j))` and agent
//! `i` sums what it receives, so in stacked form
//! `x^{k+1} = (W ⊗ I_d)(x^k − λ^k (g^k + N^k))`. With zero noise variance this
//! is the noise-free variant. The conventional baseline
//! `x_i^{k+1} = Σ_j w_ij x_j^k − λ^k g_i^k` is kept for comparison.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{metric_row, MetricRow};
use crate::problems::{feasible_hessian_eigen, Manifold, Problem, ProblemError};
use crate::rng::{keyed_rng, Domain};
use crate::topology::WeightMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("NonFiniteState: iterate became non-finite at iteration {k}")]
    NonFiniteState { k: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Harmonic,
    PiecewisePaper,
}

/// Stepsize sequence `λ^k`, indexed by iteration `k ≥ 1`.
///
/// - `constant`: `lambda0`
/// - `harmonic`: `scale / k` (with `k = 0` read as 1)
/// - `piecewise_paper`: `lambda0` for `k ≤ switch_k`, then `scale / k`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeSchedule {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default)]
    pub switch_k: usize,
    #[serde(default)]
    pub scale: f64,
}

impl StepsizeSchedule {
    pub fn constant(lambda0: f64) -> Self {
        Self { kind: ScheduleKind::Constant, lambda0, switch_k: 0, scale: 0.0 }
    }

    pub fn harmonic(scale: f64) -> Self {
        Self { kind: ScheduleKind::Harmonic, lambda0: 0.0, switch_k: 0, scale }
    }

    pub fn piecewise(lambda0: f64, switch_k: usize, scale: f64) -> Self {
        Self { kind: ScheduleKind::PiecewisePaper, lambda0, switch_k, scale }
    }

    /// 0.02 up to iteration 500, then `1/k`.
    pub fn estimation_default() -> Self {
        Self::piecewise(0.02, 500, 1.0)
    }

    /// 0.003 up to iteration 100, then `3/(10k)`.
    pub fn ica_default() -> Self {
        Self::piecewise(0.003, 100, 0.3)
    }

    pub fn stepsize(&self, k: usize) -> f64 {
        let kk = k.max(1) as f64;
        match self.kind {
            ScheduleKind::Constant => self.lambda0,
            ScheduleKind::Harmonic => self.scale / kk,
            ScheduleKind::PiecewisePaper if k <= self.switch_k => self.lambda0,
            ScheduleKind::PiecewisePaper => self.scale / kk,
        }
    }

    /// Positivity and monotonicity, checked on the parameters rather than by
    /// enumeration: every segment is non-increasing, so only the junction
    /// `scale / (switch_k + 1) ≤ lambda0` needs checking.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |msg: String| Err(OptimizerError::InvalidConfig(msg));
        match self.kind {
            ScheduleKind::Constant if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) => {
                bad(format!("constant stepsize must be positive, got {}", self.lambda0))
            }
            ScheduleKind::Harmonic if !(self.scale > 0.0 && self.scale.is_finite()) => {
                bad(format!("harmonic scale must be positive, got {}", self.scale))
            }
            ScheduleKind::PiecewisePaper => {
                if !(self.lambda0 > 0.0 && self.scale > 0.0 && self.lambda0.is_finite() && self.scale.is_finite()) {
                    return bad("piecewise schedule needs positive lambda0 and scale".into());
                }
                if self.scale / (self.switch_k + 1) as f64 > self.lambda0 {
                    return bad(format!(
                        "stepsize increases at the switch: {} / {} > {}",
                        self.scale,
                        self.switch_k + 1,
                        self.lambda0
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Gaussian privacy noise `n_j^k ~ N(0, variance · I_d)`.
///
/// The draw for agent `j` at iteration `k` is keyed by `(seed, j, k)` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Result<Self, OptimizerError> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(OptimizerError::InvalidConfig(format!("noise variance must be >= 0, got {variance}")));
        }
        Ok(Self { variance, seed })
    }

    pub fn silent() -> Self {
        Self { variance: 0.0, seed: 0 }
    }

    pub fn draw(&self, agent: usize, k: usize, d: usize) -> Vec<f64> {
        if self.variance == 0.0 {
            return vec![0.0; d];
        }
        let sd = self.variance.sqrt();
        let mut rng = keyed_rng(self.seed, Domain::Noise, agent as u64, k as u64);
        (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// `m × d` noise matrix for iteration `k`.
    pub fn draw_all(&self, m: usize, k: usize, d: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, d);
        for j in 0..m {
            for (l, v) in self.draw(j, k, d).into_iter().enumerate() {
                out[(j, l)] = v;
            }
        }
        out
    }
}

/// Per-agent iterates, one row per agent, after `k` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DMatrix<f64>,
    pub k: usize,
}

impl AgentState {
    pub fn new(x: DMatrix<f64>) -> Self {
        Self { x, k: 0 }
    }

    /// Every agent at the same point.
    pub fn uniform(m: usize, point: &[f64]) -> Self {
        Self::new(DMatrix::from_fn(m, point.len(), |_, l| point[l]))
    }

    pub fn agents(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn agent(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Network average `x̄`.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.agents() as f64;
        self.x.column_iter().map(|c| c.sum() / m).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.agents()).map(|i| self.agent(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Share `x_j − λ(g_j + n_j)`.
    #[default]
    Private,
    /// Share `x_j`, descend locally.
    Conventional,
}

/// Result of one synchronous iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: AgentState,
    pub lambda: f64,
    /// `g^k`, gradients at the pre-step iterates.
    pub gradients: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl StepOutcome {
    pub fn noise_norm(&self) -> f64 {
        self.noise.norm()
    }

    /// `‖g^k + N^k‖` over the stacked vector.
    pub fn drive_norm(&self) -> f64 {
        (&self.gradients + &self.noise).norm()
    }
}

fn gradients(state: &AgentState, p: &dyn Problem) -> Result<DMatrix<f64>, ProblemError> {
    let (m, d) = (state.agents(), state.dim());
    let mut g = DMatrix::zeros(m, d);
    for i in 0..m {
        let row = p.agent_gradient(i, &state.agent(i))?;
        for (l, v) in row.into_iter().enumerate() {
            g[(i, l)] = v;
        }
    }
    Ok(g)
}

fn check_shapes(state: &AgentState, w: &WeightMatrix, p: &dyn Problem) -> Result<(), OptimizerError> {
    if state.agents() != w.agents() || state.agents() != p.agents() || state.dim() != p.dim() {
        return Err(OptimizerError::InvalidConfig(format!(
            "state is {}x{}, weights are {}x{}, problem has {} agents in dimension {}",
            state.agents(),
            state.dim(),
            w.agents(),
            w.agents(),
            p.agents(),
            p.dim()
        )));
    }
    Ok(())
}

/// One iteration with caller-supplied noise.
pub fn step_with_noise(
    state: &AgentState,
    w: &WeightMatrix,
    p: &dyn Problem,
    lambda: f64,
    noise: DMatrix<f64>,
    algorithm: Algorithm,
) -> Result<StepOutcome, OptimizerError> {
    check_shapes(state, w, p)?;
    let g = gradients(state, p)?;
    let drive = (&g + &noise) * lambda;
    let mut x = match algorithm {
        Algorithm::Private => w.matrix() * (&state.x - drive),
        Algorithm::Conventional => w.matrix() * &state.x - drive,
    };
    if p.manifold() == Manifold::UnitSphere {
        for mut row in x.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
    }
    let next = AgentState { x, k: state.k + 1 };
    if !next.is_finite() {
        return Err(OptimizerError::NonFiniteState { k: next.k });
    }
    Ok(StepOutcome { state: next, lambda, gradients: g, noise })
}

/// One iteration of the private update: produces `x^{k+1}` using `λ^{k+1}`
/// and noise keyed by iteration `k + 1`.
pub fn step(
    state: &AgentState,
    w: &WeightMatrix,
    p: &dyn Problem,
    s: &StepsizeSchedule,
    n: &NoiseSpec,
) -> Result<StepOutcome, OptimizerError> {
    let k = state.k + 1;
    let noise = n.draw_all(state.agents(), k, state.dim());
    step_with_noise(state, w, p, s.stepsize(k), noise, Algorithm::Private)
}

/// How the iterates start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    /// Uniform in the problem's region, independently per agent and coordinate.
    RandomBox,
    /// Uniform in the region, rejecting agent draws within `margin` of the
    /// known saddle or on the far side of it from the known minimum, measured
    /// along the unstable direction.
    SaddleFree { margin: f64 },
    /// Uniform on the unit sphere, independently per agent.
    RandomUnit,
    /// One point for every agent, or one row per agent.
    Explicit { coords: Vec<Vec<f64>> },
    /// Every agent at the problem's refined saddle point.
    AtSaddle,
}

pub fn initial_state(p: &dyn Problem, mode: &InitMode, seed: u64) -> Result<AgentState, OptimizerError> {
    let (m, d) = (p.agents(), p.dim());
    let invalid = |msg: String| OptimizerError::InvalidConfig(msg);
    match mode {
        InitMode::RandomBox => {
            let region =
                p.region().ok_or_else(|| invalid(format!("problem '{}' has no region for random_box", p.name())))?;
            let mut rng = keyed_rng(seed, Domain::Init, 0, 0);
            Ok(AgentState::new(DMatrix::from_fn(m, d, |_, l| rng.random_range(region.lo[l]..=region.hi[l]))))
        }
        InitMode::SaddleFree { margin } => {
            let region =
                p.region().ok_or_else(|| invalid(format!("problem '{}' has no region for saddle_free", p.name())))?;
            let saddle =
                p.saddle_point().ok_or_else(|| invalid(format!("problem '{}' has no known saddle", p.name())))?;
            let s = saddle.refined.clone();
            let (_, vectors) = feasible_hessian_eigen(p, &s)?;
            let e1 = &vectors[0];
            // Keep the side of the saddle that holds the known minimum.
            let side = match p.minimum_point() {
                Some(min) => {
                    min.refined.iter().zip(&s).zip(e1.iter()).map(|((a, b), e)| (a - b) * e).sum::<f64>().signum()
                }
                None => -1.0,
            };
            let mut rng = keyed_rng(seed, Domain::Init, 2, 0);
            let mut x = DMatrix::zeros(m, d);
            for i in 0..m {
                let row = (0..10_000)
                    .map(|_| (0..d).map(|l| rng.random_range(region.lo[l]..=region.hi[l])).collect::<Vec<f64>>())
                    .find(|c| {
                        let off: Vec<f64> = c.iter().zip(&s).map(|(a, b)| a - b).collect();
                        let along: f64 = off.iter().zip(e1.iter()).map(|(a, b)| a * b).sum();
                        crate::linalg::norm(&off) > *margin && along * side > 0.0
                    })
                    .ok_or_else(|| invalid("saddle_free init found no admissible point".into()))?;
                for (l, v) in row.into_iter().enumerate() {
                    x[(i, l)] = v;
                }
            }
            Ok(AgentState::new(x))
        }
        InitMode::RandomUnit => {
            let mut rng = keyed_rng(seed, Domain::Init, 1, 0);
            let mut x = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            for mut row in x.row_iter_mut() {
                let n = row.norm();
                row /= n;
            }
            Ok(AgentState::new(x))
        }
        InitMode::Explicit { coords } => {
            if coords.iter().any(|c| c.len() != d) {
                return Err(invalid(format!("explicit coordinates must have length {d}")));
            }
            match coords.len() {
                1 => Ok(AgentState::uniform(m, &coords[0])),
                n if n == m => Ok(AgentState::new(DMatrix::from_fn(m, d, |i, l| coords[i][l]))),
                n => Err(invalid(format!("explicit init needs 1 or {m} points, got {n}"))),
            }
        }
        InitMode::AtSaddle => {
            let saddle =
                p.saddle_point().ok_or_else(|| invalid(format!("problem '{}' has no known saddle", p.name())))?;
            Ok(AgentState::uniform(m, &saddle.refined))
        }
    }
}

/// Everything needed to execute one run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub problem: Arc<dyn Problem>,
    pub weights: WeightMatrix,
    pub schedule: StepsizeSchedule,
    pub noise: NoiseSpec,
    pub iterations: usize,
    pub init: InitMode,
    pub seed: u64,
    pub record_every: usize,
    /// Keep full per-agent states in every record.
    pub keep_states: bool,
    pub algorithm: Algorithm,
    pub fingerprint: String,
}

impl RunSetup {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.iterations == 0 {
            return Err(OptimizerError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(OptimizerError::InvalidConfig("record_every must be >= 1".into()));
        }
        if self.weights.agents() != self.problem.agents() {
            return Err(OptimizerError::InvalidConfig(format!(
                "topology has {} agents but problem has {}",
                self.weights.agents(),
                self.problem.agents()
            )));
        }
        self.schedule.validate()?;
        NoiseSpec::new(self.noise.variance, self.noise.seed)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub metrics: MetricRow,
    /// Stepsize that produced this state (0 for the initial row).
    pub lambda: f64,
    /// `‖N^k‖` of the step that produced this state.
    pub noise_norm: f64,
    /// `‖g^k + N^k‖` of the step that produced this state.
    pub drive_norm: f64,
    pub states: Option<DMatrix<f64>>,
}

impl TraceRecord {
    pub fn k(&self) -> usize {
        self.metrics.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_state: AgentState,
    pub fingerprint: String,
    pub seed: u64,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace always has its initial record")
    }

    pub fn at(&self, k: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.k() == k)
    }
}

fn record(setup: &RunSetup, state: &AgentState, outcome: Option<&StepOutcome>) -> Result<TraceRecord, OptimizerError> {
    Ok(TraceRecord {
        metrics: metric_row(setup.problem.as_ref(), state)?,
        lambda: outcome.map_or(0.0, |o| o.lambda),
        noise_norm: outcome.map_or(0.0, StepOutcome::noise_norm),
        drive_norm: outcome.map_or(0.0, StepOutcome::drive_norm),
        states: setup.keep_states.then(|| state.x.clone()),
    })
}

fn run_with(setup: &RunSetup, algorithm: Algorithm) -> Result<RunTrace, OptimizerError> {
    setup.validate()?;
    let p = setup.problem.as_ref();
    let mut state = initial_state(p, &setup.init, setup.seed)?;
    let mut records = vec![record(setup, &state, None)?];
    for k in 1..=setup.iterations {
        let noise = setup.noise.draw_all(state.agents(), k, state.dim());
        let outcome = step_with_noise(&state, &setup.weights, p, setup.schedule.stepsize(k), noise, algorithm)?;
        if k % setup.record_every == 0 || k == setup.iterations {
            records.push(record(setup, &outcome.state, Some(&outcome))?);
        }
        state = outcome.state;
    }
    Ok(RunTrace { records, final_state: state, fingerprint: setup.fingerprint.clone(), seed: setup.seed })
}

/// Execute `iterations` steps of the configured algorithm.
pub fn run(setup: &RunSetup) -> Result<RunTrace, OptimizerError> {
    run_with(setup, setup.algorithm)
}

/// The conventional baseline on the same setup.
pub fn run_conventional_dgd(setup: &RunSetup) -> Result<RunTrace, OptimizerError> {
    run_with(setup, Algorithm::Conventional)
}
