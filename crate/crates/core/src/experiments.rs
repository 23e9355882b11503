//! Batch drivers and output formatting shared by the CLI and the acceptance
//! tests.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::MetricRow;
use crate::config::{ConfigError, SweepConfig};
use crate::optimizer::{run, InitMode, NoiseSpec, RunSetup, RunTrace, StepsizeSchedule};
use crate::privacy::PrivacyRow;
use crate::problems::{make_ica_problem, Problem};
use crate::rng::child_seed;
use crate::topology::{build_metropolis_weights, builtin_graph, BuiltinTopology, WeightMatrix};

pub const TRACE_HEADER: &str = "k,lambda,consensus_error,opt_error_mean,opt_error_max,noise_norm";
pub const SWEEP_HEADER: &str = "sigma,mean_final_error,std_final_error,runs";
pub const PRIVACY_HEADER: &str = "k,lambda,eps_sample,eps_gradient,eps_variable,delta,variance";

/// 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_csv(trace: &RunTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.k,
            fmt_real(r.lambda),
            fmt_real(m.consensus_error),
            fmt_real(m.opt_error_mean),
            fmt_real(m.opt_error_max),
            fmt_real(r.noise_norm)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_state: Vec<Vec<f64>>,
    pub final_metrics: MetricRow,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl RunSummary {
    pub fn from_trace(trace: &RunTrace) -> Self {
        Self {
            final_state: trace.final_state.to_rows(),
            final_metrics: trace.last().metrics,
            config_fingerprint: trace.fingerprint.clone(),
            seed: trace.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean_final_error: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_final_error: f64,
    pub runs: usize,
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final `opt_error_mean` of every run, grouped by variance.
///
/// Run `r` of every cell uses seed `child_seed(base.seed, r)`, so cells
/// share initial points and differ only in the noise variance.
pub fn table1_final_errors(sweep: &SweepConfig) -> Result<Vec<Vec<f64>>, ConfigError> {
    sweep.validate()?;
    let problem = sweep.base.problem.build()?;
    let weights = sweep.base.topology.build()?;
    let template = sweep.base.build_with(problem, weights)?;
    let cells = sweep.variances.len();
    let runs = sweep.runs_per_cell;
    let finals: Vec<f64> = (0..cells * runs)
        .into_par_iter()
        .map(|idx| {
            let (cell, r) = (idx / runs, idx % runs);
            let seed = child_seed(sweep.base.seed, r as u64);
            let setup = RunSetup {
                noise: NoiseSpec::new(sweep.variances[cell], seed)?,
                seed,
                record_every: template.iterations,
                ..template.clone()
            };
            Ok(run(&setup)?.last().metrics.opt_error_mean)
        })
        .collect::<Result<_, ConfigError>>()?;
    Ok(finals.chunks(runs).map(<[f64]>::to_vec).collect())
}

pub fn run_table1(sweep: &SweepConfig) -> Result<Vec<SweepRow>, ConfigError> {
    let finals = table1_final_errors(sweep)?;
    Ok(sweep
        .variances
        .iter()
        .zip(&finals)
        .map(|(&sigma, errs)| {
            let (mean, std) = mean_and_std(errs);
            SweepRow { sigma, mean_final_error: mean, std_final_error: std, runs: errs.len() }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_real(r.sigma),
            fmt_real(r.mean_final_error),
            fmt_real(r.std_final_error),
            r.runs
        );
    }
    out
}

/// Whether `values` is non-decreasing with at most `allowed` adjacent inversions.
pub fn nearly_monotone(values: &[f64], allowed: usize) -> bool {
    values.windows(2).filter(|w| w[1] < w[0]).count() <= allowed
}

pub fn privacy_csv(rows: &[PrivacyRow], delta: f64, variance: f64) -> String {
    let mut out = String::from(PRIVACY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_real(r.lambda),
            fmt_real(r.eps_sample.epsilon),
            fmt_real(r.eps_gradient.epsilon),
            fmt_real(r.eps_variable.epsilon),
            fmt_real(delta),
            fmt_real(variance)
        );
    }
    out
}

/// Batch of ICA runs, each on a freshly drawn mixing matrix and data set.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaBatch {
    pub dim: usize,
    pub agents: usize,
    pub samples_per_agent: usize,
    pub schedule: StepsizeSchedule,
    pub variance: f64,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    /// `RandomUnit` or `AtSaddle`.
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcaOutcome {
    pub run: usize,
    /// Max reconstruction error over agents at the horizon.
    pub final_max_error: f64,
    /// Largest distance of any agent from its initial point over the run.
    pub max_drift: f64,
}

pub fn ica_topology(agents: usize) -> Result<WeightMatrix, ConfigError> {
    Ok(build_metropolis_weights(&builtin_graph(BuiltinTopology::RingPlusChord, agents)?)?)
}

fn ica_single(batch: &IcaBatch, r: usize) -> Result<IcaOutcome, ConfigError> {
    let seed = child_seed(batch.seed, r as u64);
    let problem: Arc<dyn Problem> = Arc::new(make_ica_problem(batch.dim, batch.agents, batch.samples_per_agent, seed)?);
    let setup = RunSetup {
        problem,
        weights: ica_topology(batch.agents)?,
        schedule: batch.schedule.clone(),
        noise: NoiseSpec::new(batch.variance, seed)?,
        iterations: batch.horizon,
        init: batch.init.clone(),
        seed,
        record_every: 1,
        keep_states: true,
        algorithm: Default::default(),
        fingerprint: String::new(),
    };
    let trace = run(&setup)?;
    let start = trace.records[0].states.clone().expect("states kept");
    let max_drift = trace
        .records
        .iter()
        .filter_map(|rec| rec.states.as_ref())
        .map(|x| (0..x.nrows()).map(|i| (x.row(i) - start.row(i)).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    Ok(IcaOutcome { run: r, final_max_error: trace.last().metrics.opt_error_max, max_drift })
}

pub fn run_ica_batch(batch: &IcaBatch) -> Result<Vec<IcaOutcome>, ConfigError> {
    (0..batch.runs).into_par_iter().map(|r| ica_single(batch, r)).collect()
}
