//! Randomized properties of exact inference, checked against exhaustive enumeration.

#![allow(clippy::needless_range_loop)]

use ising_factor::harness::brute_force;
use ising_factor::inference::{
    boundary_drift_vector, compute_messages, covariance_matrix, drift_vector, pair_covariance, CouplingAssignment,
    DriftEngine,
};
use ising_factor::topology::{build_tree, TreeTopology};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (TreeTopology, CouplingAssignment, Vec<f64>)> {
    (2usize..=3, 1usize..=2)
        .prop_flat_map(|(d, r)| {
            let topo = build_tree(d, r).unwrap();
            let n = topo.len();
            let m = topo.edge_count();
            (Just(topo), prop::collection::vec(0.0..1.0f64, m), prop::collection::vec(-2.0..2.0f64, n))
        })
        .prop_map(|(topo, betas, x)| {
            let c = CouplingAssignment::from_edges(&topo, &betas).unwrap();
            (topo, c, x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_and_covariances_match_enumeration((topo, c, x) in instance()) {
        let oracle = brute_force(&topo, &c, &x).unwrap();
        let f = drift_vector(&topo, &c, &x).unwrap();
        let msgs = compute_messages(&topo, &c, &x).unwrap();
        for u in 0..topo.len() {
            prop_assert!((f[u] - oracle.means[u]).abs() < 1e-9);
            for v in 0..topo.len() {
                let cov = pair_covariance(&topo, &c, &msgs, u, v);
                prop_assert!((cov - oracle.covariance(u, v)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn engine_agrees_with_messages((topo, c, x) in instance()) {
        let mut engine = DriftEngine::new(&topo, &c).unwrap();
        let mut out = vec![0.0; topo.len()];
        engine.evaluate(&x, &mut out);
        let f = drift_vector(&topo, &c, &x).unwrap();
        for (a, b) in out.iter().zip(&f) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn drift_is_odd_and_monotone((topo, c, x) in instance(), bump in 0.0..1.0f64, at in 0usize..64) {
        let f = drift_vector(&topo, &c, &x).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let g = drift_vector(&topo, &c, &neg).unwrap();
        let mut y = x.clone();
        y[at % topo.len()] += bump;
        let h = drift_vector(&topo, &c, &y).unwrap();
        for v in 0..topo.len() {
            prop_assert!((f[v] + g[v]).abs() < 1e-14);
            // Ferromagnetic couplings: raising one field never lowers any magnetization.
            prop_assert!(h[v] >= f[v] - 1e-15);
        }
    }

    #[test]
    fn covariance_matrix_is_symmetric_with_nonnegative_entries((topo, c, x) in instance()) {
        let m = covariance_matrix(&topo, &c, &x).unwrap();
        for u in 0..topo.len() {
            prop_assert!(m.get(u, u) > 0.0 && m.get(u, u) <= 1.0);
            for v in 0..topo.len() {
                prop_assert_eq!(m.get(u, v), m.get(v, u));
                prop_assert!(m.get(u, v) >= -1e-15);
            }
        }
    }
}

/// The boundary drift vector is the derivative of the drift in the outer coupling.
#[test]
fn boundary_vector_is_coupling_derivative() {
    let topo = build_tree(3, 2).unwrap();
    let (beta, gamma, h) = (0.7, 0.3, 1e-5);
    let x: Vec<f64> = (0..topo.len()).map(|i| 1.5 * ((i as f64) * 1.3).sin()).collect();
    let n = boundary_drift_vector(&topo, &CouplingAssignment::interpolated(&topo, beta, gamma).unwrap(), &x).unwrap();
    let plus = drift_vector(&topo, &CouplingAssignment::interpolated(&topo, beta, gamma + h).unwrap(), &x).unwrap();
    let minus = drift_vector(&topo, &CouplingAssignment::interpolated(&topo, beta, gamma - h).unwrap(), &x).unwrap();
    for v in 0..topo.len() {
        let fd = (plus[v] - minus[v]) / (2.0 * h);
        assert!((fd - n[v]).abs() < 1e-8, "vertex {v}: {fd} vs {}", n[v]);
    }
}

/// Zero field: every covariance is the product of `tanh(beta)` along the path,
/// with couplings differing per edge.
#[test]
fn zero_field_covariance_is_path_product() {
    let topo = build_tree(3, 2).unwrap();
    let betas: Vec<f64> = (0..topo.edge_count()).map(|e| 0.1 + 0.07 * e as f64).collect();
    let c = CouplingAssignment::from_edges(&topo, &betas).unwrap();
    let m = covariance_matrix(&topo, &c, &vec![0.0; topo.len()]).unwrap();
    for u in 0..topo.len() {
        for v in 0..topo.len() {
            let path = topo.path_indices(u, v);
            let expected: f64 = path.windows(2).map(|w| c.between(&topo, w[0], w[1]).tanh()).product();
            assert!((m.get(u, v) - expected).abs() < 1e-12);
        }
    }
}
