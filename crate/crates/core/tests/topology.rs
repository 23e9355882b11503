use dpnc_core::topology::{
    build_metropolis_weights, builtin_graph, builtin_topology, spectral_gap, validate_weight_matrix, BuiltinTopology,
    Graph, TopologyError,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Cyclic Jacobi rotations; returns eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

fn oracle_gap(w: &DMatrix<f64>) -> f64 {
    let m = w.nrows();
    let b = w - DMatrix::from_element(m, m, 1.0 / m as f64);
    jacobi_eigenvalues(&b).into_iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn connected_graph() -> impl Strategy<Value = Graph> {
    (2usize..=20).prop_flat_map(|m| {
        let parents: Vec<BoxedStrategy<usize>> = (1..m).map(|i| (0..i).boxed()).collect();
        let extra = proptest::collection::vec((0..m, 0..m), 0..2 * m);
        (Just(m), parents, extra).prop_map(|(m, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.into_iter().enumerate().map(|(i, p)| (p, i + 1)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            Graph::new(m, edges).unwrap()
        })
    })
}

#[test]
fn builtins_validate_up_to_fifty_agents() {
    for kind in
        [BuiltinTopology::Complete, BuiltinTopology::Ring, BuiltinTopology::Path, BuiltinTopology::RingPlusChord]
    {
        for m in 2..=50 {
            let w = build_metropolis_weights(&builtin_graph(kind, m).unwrap()).unwrap();
            let again = validate_weight_matrix(w.matrix().clone()).unwrap();
            assert!(again.eta() < 1.0, "{kind} m={m}");
        }
    }
}

#[test]
fn triangle_is_uniform_with_zero_gap() {
    let w = build_metropolis_weights(&builtin_topology("complete", 3).unwrap()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((w.weight(i, j) - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert!(w.eta() < 1e-12);
    assert!(oracle_gap(w.matrix()) < 1e-12);
}

#[test]
fn five_ring_gap_matches_closed_form() {
    // Ring Metropolis weights are 1/3 everywhere; eigenvalues (1 + 2cos(2πk/5))/3.
    let w = build_metropolis_weights(&builtin_topology("ring", 5).unwrap()).unwrap();
    let expected = (1..5)
        .map(|k| ((1.0 + 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 5.0).cos()) / 3.0).abs())
        .fold(0.0, f64::max);
    assert!((w.eta() - expected).abs() < 1e-12);
}

#[test]
fn disconnected_and_bad_matrices_rejected() {
    let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
    assert!(matches!(build_metropolis_weights(&g), Err(TopologyError::DisconnectedGraph(_))));
    let identity = DMatrix::<f64>::identity(3, 3);
    assert!(matches!(validate_weight_matrix(identity), Err(TopologyError::SpectralGapViolation(_))));
    let skew = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.5, 0.5]);
    assert!(matches!(validate_weight_matrix(skew), Err(TopologyError::NotSymmetric { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_gap_matches_jacobi(g in connected_graph()) {
        let w = build_metropolis_weights(&g).unwrap();
        prop_assert!((spectral_gap(w.matrix()) - oracle_gap(w.matrix())).abs() <= 1e-10);
        prop_assert!((w.eta() - oracle_gap(w.matrix())).abs() <= 1e-10);
    }

    #[test]
    fn mixing_preserves_the_agent_mean(g in connected_graph(), d in 1usize..4, seed in any::<u64>()) {
        let w = build_metropolis_weights(&g).unwrap();
        let m = g.agents();
        let mut state = seed;
        let x = DMatrix::from_fn(m, d, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        });
        let mixed = w.matrix() * &x;
        let ones = DVector::from_element(m, 1.0 / m as f64);
        let before = x.transpose() * &ones;
        let after = mixed.transpose() * &ones;
        prop_assert!((before - after).amax() <= 1e-12);
    }
}
