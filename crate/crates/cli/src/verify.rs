//! Fast built-in property table for `dpnc verify`.

use std::process::ExitCode;
use std::sync::Arc;

use dpnc_core::analysis::assert_contraction;
use dpnc_core::linalg::{dist, norm};
use dpnc_core::optimizer::{run, Algorithm, InitMode, NoiseSpec, RunSetup, StepsizeSchedule};
use dpnc_core::privacy::{budget_for_variance, variance_for_budget, PrivacyBudget, PrivacyTarget, SensitivityInputs};
use dpnc_core::problems::{
    classify_stationary_point, finite_difference_gradient, make_ica_problem, make_paper_estimation_problem, Problem,
    StationaryKind,
};
use dpnc_core::topology::{build_metropolis_weights, builtin_graph, spectral_gap, BuiltinTopology, STOCHASTIC_TOL};

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn weight_matrices() -> Check {
    let mut worst: f64 = 0.0;
    let mut eta_max: f64 = 0.0;
    let mut count = 0;
    for kind in
        [BuiltinTopology::Complete, BuiltinTopology::Ring, BuiltinTopology::Path, BuiltinTopology::RingPlusChord]
    {
        for m in 2..=10 {
            let Ok(w) = builtin_graph(kind, m).and_then(|g| build_metropolis_weights(&g)) else {
                return check("weight_matrix_invariants", false, format!("{kind} on {m} agents rejected"));
            };
            let a = w.matrix();
            worst = worst.max((a - a.transpose()).amax());
            for i in 0..m {
                worst = worst.max((a.row(i).sum() - 1.0).abs()).max((a.column(i).sum() - 1.0).abs());
            }
            worst = worst.max((spectral_gap(a) - w.eta()).abs());
            eta_max = eta_max.max(w.eta());
            count += 1;
        }
    }
    check(
        "weight_matrix_invariants",
        worst <= STOCHASTIC_TOL && eta_max < 1.0,
        format!("{count} matrices, max defect {worst:.1e}, max eta {eta_max:.4}"),
    )
}

fn gradient_fd(name: &'static str, p: &dyn Problem, points: &[Vec<f64>]) -> Check {
    let mut worst: f64 = 0.0;
    for x in points {
        for i in 0..p.agents() {
            let (Ok(g), Ok(fd)) = (p.agent_gradient(i, x), finite_difference_gradient(p, i, x, 1e-6)) else {
                return check(name, false, format!("evaluation failed at {x:?}"));
            };
            worst = worst.max(dist(&g, &fd) / norm(&g).max(1.0));
        }
    }
    check(name, worst <= 1e-6, format!("{} points, max relative error {worst:.1e}", points.len()))
}

fn contraction() -> Check {
    let problem: Arc<dyn Problem> = Arc::new(make_paper_estimation_problem());
    let weights = match builtin_graph(BuiltinTopology::RingPlusChord, 5).and_then(|g| build_metropolis_weights(&g)) {
        Ok(w) => w,
        Err(e) => return check("contraction_inequality", false, e.to_string()),
    };
    let setup = RunSetup {
        problem,
        weights: weights.clone(),
        schedule: StepsizeSchedule::estimation_default(),
        noise: NoiseSpec { variance: 0.5, seed: 11 },
        iterations: 200,
        init: InitMode::RandomBox,
        seed: 11,
        record_every: 1,
        keep_states: true,
        algorithm: Algorithm::Private,
        fingerprint: String::new(),
    };
    match run(&setup)
        .map_err(|e| e.to_string())
        .and_then(|t| assert_contraction(&t, &weights).map_err(|e| e.to_string()))
    {
        Ok(r) => check(
            "contraction_inequality",
            r.violations == 0,
            format!("{} pairs, {} violations", r.checked_pairs, r.violations),
        ),
        Err(e) => check("contraction_inequality", false, e),
    }
}

fn privacy_round_trip() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for target in [PrivacyTarget::Sample, PrivacyTarget::Gradient, PrivacyTarget::Variable] {
        for eps in [0.05, 0.3, 0.5, 0.9] {
            for delta in [1e-5, 0.01, 0.05, 0.2] {
                for lambda in [1e-3, 0.02, 0.3] {
                    let inputs = SensitivityInputs { nu: 3.0, lambda_k: lambda, n_i: 160 };
                    let budget = PrivacyBudget::new(eps, delta, target).expect("grid is in range");
                    let v = variance_for_budget(&budget, &inputs);
                    match budget_for_variance(v, target, &inputs, delta) {
                        Ok(back) => worst = worst.max((back.epsilon - eps).abs() / eps),
                        Err(e) => return check("privacy_round_trip", false, e.to_string()),
                    }
                    count += 1;
                }
            }
        }
    }
    check("privacy_round_trip", worst <= 1e-12, format!("{count} points, max relative error {worst:.1e}"))
}

fn classification(name: &'static str, p: &dyn Problem, point: [f64; 2], expected: StationaryKind) -> Check {
    match classify_stationary_point(p, &point, 1e-2, 1e-6) {
        Ok(kind) => check(name, kind == expected, format!("({}, {}) -> {kind}", point[0], point[1])),
        Err(e) => check(name, false, e.to_string()),
    }
}

pub fn cmd_verify() -> ExitCode {
    let estimation = make_paper_estimation_problem();
    let est_points =
        vec![vec![1.0, 1.0], vec![-3.0, 0.5], vec![2.0, -2.0], vec![-7.0, 2.5], vec![6.0, 0.5], vec![-2.0, -4.5]];
    let ica = match make_ica_problem(4, 5, 160, 5) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("FAIL ica construction: {e}");
            return ExitCode::from(1);
        }
    };
    let ica_points: Vec<Vec<f64>> = [[1.0, 2.0, -0.5, 0.3], [0.1, -0.2, 0.9, 0.4], [0.5, 0.5, 0.5, 0.5]]
        .iter()
        .map(|v| {
            let n = norm(v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();

    let checks = [
        weight_matrices(),
        gradient_fd("estimation_gradient_fd", &estimation, &est_points),
        gradient_fd("ica_gradient_fd", &ica, &ica_points),
        contraction(),
        privacy_round_trip(),
        classification("classify_printed_minimum", &estimation, [1.3478, 1.0690], StationaryKind::Minimum),
        classification("classify_printed_saddle", &estimation, [-7.4336, 1.3959], StationaryKind::StrictSaddle),
    ];
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!("{} {:<width$}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    match checks.iter().find(|c| !c.passed) {
        None => ExitCode::SUCCESS,
        Some(c) => {
            eprintln!("verify failed: {}", c.name);
            ExitCode::from(1)
        }
    }
}
