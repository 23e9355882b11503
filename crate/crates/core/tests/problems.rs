use std::sync::LazyLock;

use dpnc_core::linalg::{dist, norm};
use dpnc_core::problems::{
    aggregated_gradient, aggregated_hessian, classify_stationary_point, finite_difference_gradient,
    finite_difference_hessian, ica_reconstruction_error, make_ica_problem, make_paper_estimation_problem,
    CustomQuadratic, EstimationProblem, IcaProblem, Problem, StationaryKind,
};
use proptest::prelude::*;

static ESTIMATION: LazyLock<EstimationProblem> = LazyLock::new(make_paper_estimation_problem);
static ICA: LazyLock<IcaProblem> = LazyLock::new(|| make_ica_problem(4, 5, 32, 17).unwrap());

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / norm(a).max(1.0)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

#[test]
fn estimation_gradient_at_origin() {
    let p = make_paper_estimation_problem();
    let g = p.agent_gradient(0, &[0.0, 0.0]).unwrap();
    assert!(dist(&g, &[-2.0 / 3.0, -8.0 / 3.0]) < 1e-15);
    let fd = finite_difference_gradient(&p, 0, &[0.0, 0.0], 1e-5).unwrap();
    assert!(dist(&g, &fd) <= 1e-6);
}

#[test]
fn origin_is_not_stationary() {
    let p = make_paper_estimation_problem();
    assert_eq!(classify_stationary_point(&p, &[0.0, 0.0], 1e-2, 1e-6).unwrap(), StationaryKind::NotStationary);
}

#[test]
fn third_observation() {
    let p = make_paper_estimation_problem();
    assert_eq!(p.observation(2).as_slice(), &[1.0, 2.0, 0.0]);
}

#[test]
fn estimation_known_points() {
    let p = make_paper_estimation_problem();
    let min = p.minimum_point().unwrap();
    let sad = p.saddle_point().unwrap();
    assert!(dist(&min.refined, &[1.3478, 1.0690]) < 1e-3);
    assert!(dist(&sad.refined, &[-7.4336, 1.3959]) < 1e-3);
    assert!(norm(&aggregated_gradient(&p, &min.refined).unwrap()) <= 1e-10);
    assert!(norm(&aggregated_gradient(&p, &sad.refined).unwrap()) <= 1e-10);
    assert_eq!(classify_stationary_point(&p, &[1.3478, 1.0690], 1e-2, 1e-6).unwrap(), StationaryKind::Minimum);
    assert_eq!(classify_stationary_point(&p, &[-7.4336, 1.3959], 1e-2, 1e-6).unwrap(), StationaryKind::StrictSaddle);
}

#[test]
fn region_boundary_is_continuous() {
    let p = make_paper_estimation_problem();
    let faces: Vec<[f64; 2]> = (0..=40)
        .flat_map(|i| {
            let t = i as f64 / 40.0;
            [[-8.0, -3.0 + 6.0 * t], [4.0, -3.0 + 6.0 * t], [-8.0 + 12.0 * t, -3.0], [-8.0 + 12.0 * t, 3.0]]
        })
        .collect();
    for b in faces {
        for (dx, dy) in [(1e-7, 0.0), (0.0, 1e-7), (1e-7, 1e-7)] {
            let (lo, hi) = ([b[0] - dx, b[1] - dy], [b[0] + dx, b[1] + dy]);
            for agent in 0..5 {
                let f = |x: &[f64; 2]| p.agent_objective(agent, x).unwrap();
                assert!((f(&lo) - f(&hi)).abs() <= 1e-5, "objective jump at {b:?}");
                let (gl, gh) = (p.agent_gradient(agent, &lo).unwrap(), p.agent_gradient(agent, &hi).unwrap());
                assert!(dist(&gl, &gh) <= 1e-5, "gradient jump at {b:?}");
            }
        }
    }
}

#[test]
fn estimation_grows_linearly_far_out() {
    let p = make_paper_estimation_problem();
    let f = |x: f64| p.agent_objective(0, &[x, 0.0]).unwrap();
    let slope_a = (f(20.0) - f(10.0)) / 10.0;
    let slope_b = (f(40.0) - f(30.0)) / 10.0;
    assert!((slope_a - p.outer_slope()).abs() < 1e-9);
    assert!((slope_b - p.outer_slope()).abs() < 1e-9);
}

#[test]
fn synthetic_saddle_classification() {
    let q = CustomQuadratic::new(vec![1.0, -1.0], vec![vec![0.0, 0.0]]).unwrap();
    assert_eq!(classify_stationary_point(&q, &[0.0, 0.0], 1e-8, 1e-6).unwrap(), StationaryKind::StrictSaddle);
}

#[test]
fn ica_uniform_point_is_refined_near_mixed_ones() {
    let p = make_ica_problem(4, 5, 160, 9).unwrap();
    let s = p.saddle_point().unwrap();
    let quoted: Vec<f64> = (p.mixing() * nalgebra::DVector::from_element(4, 0.5)).iter().copied().collect();
    assert_eq!(s.quoted.len(), 4);
    assert!(dist(&s.quoted, &quoted) < 1e-12);
    assert!(dist(&s.refined, &quoted) < 0.2);
    assert!(norm(&aggregated_gradient(&p, &s.refined).unwrap()) < 1e-10);
}

#[test]
fn ica_reconstruction_of_columns_is_zero() {
    let p = make_ica_problem(4, 5, 40, 2).unwrap();
    for j in 0..4 {
        let col: Vec<f64> = p.mixing().column(j).iter().copied().collect();
        assert!(ica_reconstruction_error(&p, &col).unwrap() < 1e-12);
        let neg: Vec<f64> = col.iter().map(|v| -v).collect();
        assert!(ica_reconstruction_error(&p, &neg).unwrap() < 1e-12);
    }
    assert!(ica_reconstruction_error(&p, &[2.0, 0.0, 0.0, 0.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn estimation_gradient_matches_finite_differences(x in -12.0f64..8.0, y in -7.0f64..7.0, agent in 0usize..5) {
        let p = &*ESTIMATION;
        let g = p.agent_gradient(agent, &[x, y]).unwrap();
        let fd = finite_difference_gradient(p, agent, &[x, y], 1e-6).unwrap();
        prop_assert!(relative_gap(&g, &fd) <= 1e-5, "at ({x}, {y}): {g:?} vs {fd:?}");
    }

    #[test]
    fn estimation_hessian_symmetric_and_consistent(x in -7.9f64..3.9, y in -2.9f64..2.9) {
        prop_assume!(x.hypot(y) > 1e-2);
        let p = &*ESTIMATION;
        let h = aggregated_hessian(p, &[x, y]).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-10);
        let fd = finite_difference_hessian(p, &[x, y], 1e-5).unwrap();
        prop_assert!((&h - fd).amax() <= 1e-5 * h.amax().max(1.0));
    }

    #[test]
    fn ica_gradient_matches_finite_differences(v in proptest::collection::vec(-1.0f64..1.0, 4), agent in 0usize..5) {
        prop_assume!(norm(&v) > 0.1);
        let p = &*ICA;
        let u = unit(&v);
        let g = p.agent_gradient(agent, &u).unwrap();
        let fd = finite_difference_gradient(p, agent, &u, 1e-6).unwrap();
        prop_assert!(relative_gap(&g, &fd) <= 1e-5);
        let h = aggregated_hessian(p, &u).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-10);
    }

    #[test]
    fn ica_objective_is_even(v in proptest::collection::vec(-1.0f64..1.0, 4), agent in 0usize..5) {
        prop_assume!(norm(&v) > 0.1);
        let p = &*ICA;
        let u = unit(&v);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        prop_assert_eq!(p.agent_objective(agent, &u).unwrap(), p.agent_objective(agent, &neg).unwrap());
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(
        diag in proptest::collection::vec(-2.0f64..2.0, 3),
        x in proptest::collection::vec(-5.0f64..5.0, 3),
    ) {
        let q = CustomQuadratic::new(diag, vec![vec![1.0, -1.0, 0.5], vec![0.0, 2.0, -3.0]]).unwrap();
        for agent in 0..2 {
            let g = q.agent_gradient(agent, &x).unwrap();
            let fd = finite_difference_gradient(&q, agent, &x, 1e-6).unwrap();
            prop_assert!(relative_gap(&g, &fd) <= 1e-5);
        }
    }
}
