use std::fs;
use std::path::{Path, PathBuf};

use dpnc_core::analysis::{run_coupling_experiment, CouplingResult, CouplingSettings};
use dpnc_core::config::{fingerprint, load_json, ConfigError, CouplingConfig, PrivacyConfig, RunConfig, SweepConfig};
use dpnc_core::experiments::{privacy_csv, run_table1, sweep_csv, trace_csv, RunSummary};
use dpnc_core::optimizer::{run, NoiseSpec};
use dpnc_core::privacy::per_iteration_report;
use serde::Serialize;

use crate::CommonArgs;

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ConfigError> {
    let io =
        |path: &Path, e: std::io::Error| ConfigError::Io { path: path.display().to_string(), message: e.to_string() };
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    let tmp = path.with_file_name(format!(".{}.tmp", path.file_name().and_then(|n| n.to_str()).unwrap_or("out")));
    fs::write(&tmp, contents).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("outputs always serialize");
    s.push('\n');
    s
}

pub fn cmd_run(args: &CommonArgs) -> Result<(), ConfigError> {
    let mut config: RunConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(every) = args.record_every {
        config.record_every = every;
    }
    let trace = run(&config.build()?)?;
    let dir = args.out_dir();
    let csv = write_atomic(&dir, &config.output.trace, &trace_csv(&trace))?;
    let summary = write_atomic(&dir, &config.output.summary, &to_json(&RunSummary::from_trace(&trace)))?;
    println!("wrote {} and {}", csv.display(), summary.display());
    Ok(())
}

pub fn cmd_table1(args: &CommonArgs) -> Result<(), ConfigError> {
    let mut sweep: SweepConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        sweep.base.seed = seed;
    }
    let rows = run_table1(&sweep)?;
    for r in &rows {
        println!("sigma {:.2}  mean {:.6}  std {:.6}  runs {}", r.sigma, r.mean_final_error, r.std_final_error, r.runs);
    }
    let path = write_atomic(&args.out_dir(), &sweep.output, &sweep_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct CouplingOutput<'a> {
    config_fingerprint: String,
    seed: u64,
    variance: f64,
    horizon: usize,
    #[serde(flatten)]
    result: &'a CouplingResult,
}

pub fn cmd_coupling(args: &CommonArgs) -> Result<(), ConfigError> {
    let mut config: CouplingConfig = load_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let problem = config.problem.build()?;
    let weights = config.topology.build()?;
    let saddle = match &config.saddle {
        Some(s) => s.clone(),
        None => problem
            .saddle_point()
            .map(|p| p.refined.clone())
            .ok_or_else(|| ConfigError::Invalid(format!("problem '{}' has no known saddle", problem.name())))?,
    };
    let settings = CouplingSettings {
        schedule: config.schedule.clone(),
        variance: config.variance,
        runs: config.runs,
        horizon: config.horizon,
        escape_radius: config.escape_radius,
        seed: config.seed,
    };
    let result = run_coupling_experiment(problem.as_ref(), &weights, &saddle, &settings)?;
    println!("escaped {} of {} runs", result.escape_count, result.total_runs);
    let out = CouplingOutput {
        config_fingerprint: fingerprint(&config),
        seed: config.seed,
        variance: config.variance,
        horizon: config.horizon,
        result: &result,
    };
    let path = write_atomic(&args.out_dir(), &config.output, &to_json(&out))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_privacy_report(args: &CommonArgs) -> Result<(), ConfigError> {
    let config: PrivacyConfig = load_json(&args.config)?;
    let (nu, n_i) = config.resolve_inputs()?;
    let noise = NoiseSpec::new(config.variance, 0)?;
    let rows = per_iteration_report(&config.schedule, &noise, nu, n_i, config.delta, config.horizon)?;
    let path = write_atomic(&args.out_dir(), &config.output, &privacy_csv(&rows, config.delta, config.variance))?;
    println!("wrote {}", path.display());
    Ok(())
}
