//! Monte-Carlo properties of the drift SDE that hold at any depth.

use ising_factor::harness::stats::mean_se;
use ising_factor::inference::CouplingAssignment;
use ising_factor::sde::{integrate, reference_pair, NoiseSource};
use ising_factor::topology::build_tree;

/// `E[X_t(v)^2] = t^2 + t` at every vertex, matched by the reference process.
#[test]
fn second_moment_matches_reference() {
    let topo = build_tree(3, 2).unwrap();
    let c = CouplingAssignment::uniform(&topo, 0.4).unwrap();
    let (t, dt, n) = (1.0, 0.01, 4000u64);
    let (mut sde, mut reference) = (Vec::new(), Vec::new());
    for r in 0..n {
        let traj = integrate(&topo, &c, &NoiseSource::new(21, r, dt).unwrap(), t).unwrap();
        sde.push(traj.last()[0].powi(2));
        let pair = reference_pair(&topo, &c, 21, r, t, t).unwrap();
        reference.push(pair.xbar(pair.steps())[0].powi(2));
    }
    for (name, xs) in [("sde", &sde), ("reference", &reference)] {
        let e = mean_se(xs);
        assert!((e.mean - (t * t + t)).abs() < 4.0 * e.se, "{name}: {} +- {}", e.mean, e.se);
    }
}

/// Without coupling each coordinate is `B_t + int tanh(X_s) ds`, so the law is symmetric and
/// coordinates are independent.
#[test]
fn decoupled_coordinates_are_uncorrelated() {
    let topo = build_tree(3, 1).unwrap();
    let c = CouplingAssignment::uniform(&topo, 0.0).unwrap();
    let mut prods = Vec::new();
    let mut firsts = Vec::new();
    for r in 0..4000u64 {
        let traj = integrate(&topo, &c, &NoiseSource::new(4, r, 0.01).unwrap(), 1.0).unwrap();
        prods.push(traj.last()[0] * traj.last()[1]);
        firsts.push(traj.last()[0]);
    }
    let p = mean_se(&prods);
    let m = mean_se(&firsts);
    assert!(p.mean.abs() < 4.0 * p.se, "product mean {} +- {}", p.mean, p.se);
    assert!(m.mean.abs() < 4.0 * m.se, "mean {} +- {}", m.mean, m.se);
}

/// Shared noise: the same seed and replica give identical paths; another replica differs.
#[test]
fn replicas_are_reproducible_and_distinct() {
    let topo = build_tree(4, 2).unwrap();
    let c = CouplingAssignment::uniform(&topo, 0.3).unwrap();
    let a = integrate(&topo, &c, &NoiseSource::new(8, 3, 0.01).unwrap(), 0.5).unwrap();
    let b = integrate(&topo, &c, &NoiseSource::new(8, 3, 0.01).unwrap(), 0.5).unwrap();
    let other = integrate(&topo, &c, &NoiseSource::new(8, 4, 0.01).unwrap(), 0.5).unwrap();
    assert_eq!(a.last(), b.last());
    assert_ne!(a.last(), other.last());
}
