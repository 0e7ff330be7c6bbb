//! Deterministic validation suites over random small instances.

use super::oracle::{brute_force, brute_force_permuted};
use super::report::{params, Check, GofReport};
use crate::error::Result;
use crate::inference::{
    boundary_drift_vector, boundary_triple_covariance, chain_factors, compute_messages, covariance_matrix,
    drift_vector, pair_covariance, pair_covariance_path_form, path_partition, ChainFactors, ChainPath,
    CouplingAssignment, DriftEngine,
};
use crate::rng::{purpose, RngStream};
use crate::topology::{build_tree, TreeTopology};

/// Absolute tolerance of the oracle comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// A random tree, per-edge couplings and a field vector.
#[derive(Clone, Debug)]
pub struct Instance {
    pub topo: TreeTopology,
    pub couplings: CouplingAssignment,
    pub fields: Vec<f64>,
}

/// Ranges from which random instances are drawn.
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub degrees: Vec<usize>,
    pub min_depth: usize,
    pub max_depth: usize,
    pub beta_max: f64,
    pub field_max: f64,
}

impl InstanceSpec {
    pub fn oracle_sized() -> Self {
        InstanceSpec { degrees: vec![2, 3], min_depth: 1, max_depth: 2, beta_max: 1.0, field_max: 2.0 }
    }

    pub fn identity_sized() -> Self {
        InstanceSpec { degrees: vec![2, 3, 4], min_depth: 1, max_depth: 3, beta_max: 1.0, field_max: 2.0 }
    }
}

fn pick<T: Copy>(rng: &mut RngStream, items: &[T]) -> T {
    items[(rng.next_u64() % items.len() as u64) as usize]
}

fn uniform_in(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_uniform()
}

pub fn random_fields(rng: &mut RngStream, n: usize, field_max: f64) -> Vec<f64> {
    (0..n).map(|_| uniform_in(rng, -field_max, field_max)).collect()
}

pub fn random_instance(rng: &mut RngStream, spec: &InstanceSpec) -> Result<Instance> {
    let d = pick(rng, &spec.degrees);
    let depth = spec.min_depth + (rng.next_u64() % (spec.max_depth - spec.min_depth + 1) as u64) as usize;
    let topo = build_tree(d, depth)?;
    let betas: Vec<f64> = (0..topo.edge_count()).map(|_| uniform_in(rng, 0.0, spec.beta_max)).collect();
    let couplings = CouplingAssignment::from_edges(&topo, &betas)?;
    let fields = random_fields(rng, topo.len(), spec.field_max);
    Ok(Instance { topo, couplings, fields })
}

fn instance_stream(seed: u64, suite: u64) -> RngStream {
    RngStream::new(seed).derive(purpose::INSTANCES).derive(suite)
}

/// Running maximum of absolute deviations.
#[derive(Default)]
struct MaxDev(f64);

impl MaxDev {
    fn add(&mut self, a: f64, b: f64) {
        let d = (a - b).abs();
        // NaN must not hide behind max().
        self.0 = if d.is_nan() { f64::INFINITY } else { self.0.max(d) };
    }
}

/// Compares every exact-inference output with exhaustive enumeration.
pub fn suite_inference_vs_oracle(trials: usize, seed: u64) -> Result<GofReport> {
    let mut rng = instance_stream(seed, 1);
    let spec = InstanceSpec::oracle_sized();
    let (mut marg, mut drift, mut engine_dev, mut cov, mut var, mut tri_off, mut tri_end) = (
        MaxDev::default(),
        MaxDev::default(),
        MaxDev::default(),
        MaxDev::default(),
        MaxDev::default(),
        MaxDev::default(),
        MaxDev::default(),
    );
    let (mut law, mut m_dev, mut n_dev, mut norm, mut order) =
        (MaxDev::default(), MaxDev::default(), MaxDev::default(), MaxDev::default(), MaxDev::default());
    for _ in 0..trials {
        let Instance { topo, couplings, fields } = random_instance(&mut rng, &spec)?;
        let n = topo.len();
        let oracle = brute_force(&topo, &couplings, &fields)?;
        let other = brute_force_permuted(&topo, &couplings, &fields)?;
        norm.add(oracle.total_probability(), 1.0);
        for (a, b) in oracle.pair_cov.iter().zip(&other.pair_cov) {
            order.add(*a, *b);
        }
        order.add(oracle.log_z, other.log_z);
        let msgs = compute_messages(&topo, &couplings, &fields)?;
        let f = drift_vector(&topo, &couplings, &fields)?;
        let mut engine = DriftEngine::new(&topo, &couplings)?;
        let mut fe = vec![0.0; n];
        engine.evaluate(&fields, &mut fe);
        for v in 0..n {
            marg.add(msgs.magnetization(v), oracle.means[v]);
            drift.add(f[v], oracle.means[v]);
            engine_dev.add(fe[v], oracle.means[v]);
        }
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    var.add(pair_covariance(&topo, &couplings, &msgs, u, u), oracle.covariance(u, u));
                    var.add(pair_covariance_path_form(&topo, &couplings, &msgs, u, u), oracle.covariance(u, u));
                } else {
                    cov.add(pair_covariance(&topo, &couplings, &msgs, u, v), oracle.covariance(u, v));
                }
            }
        }
        for u in 0..n {
            for v in u + 1..n {
                let q = path_partition(&topo, &couplings, &msgs, u, v);
                let exact = oracle.marginal_law(&q.path);
                for (k, p) in exact.iter().enumerate() {
                    let spins: Vec<i8> = (0..q.path.len()).map(|i| if k >> i & 1 == 1 { 1 } else { -1 }).collect();
                    law.add(q.config_probability(&spins), *p);
                }
            }
        }
        let m = covariance_matrix(&topo, &couplings, &fields)?;
        for u in 0..n {
            for v in 0..n {
                m_dev.add(m.get(u, v), oracle.covariance(u, v));
            }
        }
        let boundary = topo.boundary_edges().boundary;
        let nv = boundary_drift_vector(&topo, &couplings, &fields)?;
        for v in 0..n {
            let mut exact_n = 0.0;
            for &e in &boundary {
                let exact = oracle.triple_covariance(e.parent, e.child, v);
                exact_n += exact;
                let got = boundary_triple_covariance(&topo, &couplings, &msgs, e, v)?;
                if v == e.child {
                    tri_end.add(got, exact);
                } else {
                    tri_off.add(got, exact);
                }
            }
            n_dev.add(nv[v], exact_n);
        }
    }
    let tol = ORACLE_TOLERANCE;
    let checks = vec![
        Check::at_most("oracle_normalization", norm.0, 1e-12, "probabilities sum to one"),
        Check::at_most("oracle_order_independence", order.0, 1e-12, "natural vs Gray-code enumeration"),
        Check::at_most("marginals", marg.0, tol, "message-table magnetizations"),
        Check::at_most("drift_vector", drift.0, tol, "allocating drift"),
        Check::at_most("drift_engine", engine_dev.0, tol, "allocation-free drift"),
        Check::at_most("pair_covariance", cov.0, tol, "off-diagonal, path partition form"),
        Check::at_most("variance_both_forms", var.0, tol, "direct and path partition forms"),
        Check::at_most("triple_covariance_off_edge", tri_off.0, tol, "v not the outer endpoint"),
        Check::at_most("triple_covariance_at_edge", tri_end.0, tol, "v the outer endpoint"),
        Check::at_most("restricted_path_law", law.0, tol, "law of spins along a path"),
        Check::at_most("matrix_m", m_dev.0, tol, "covariance matrix entries"),
        Check::at_most("vector_n", n_dev.0, tol, "boundary drift entries"),
    ];
    Ok(GofReport::new("inference_vs_oracle", params(&[("trials", trials as f64), ("seed", seed as f64)]), checks))
}

/// A random non-backtracking path with at least two vertices and random outer ends.
fn random_chain(rng: &mut RngStream, topo: &TreeTopology) -> ChainPath {
    let n = topo.len();
    let (u, v) = loop {
        let u = (rng.next_u64() % n as u64) as usize;
        let v = (rng.next_u64() % n as u64) as usize;
        if u != v {
            break (u, v);
        }
    };
    let verts = topo.path_indices(u, v);
    let outer = |rng: &mut RngStream, end: usize, inner: usize| {
        let options: Vec<usize> = topo.neighbors(end).filter(|&w| w != inner).collect();
        if options.is_empty() || rng.next_uniform() < 0.5 {
            None
        } else {
            Some(pick(rng, &options))
        }
    };
    let before = outer(rng, verts[0], verts[1]);
    let after = outer(rng, verts[verts.len() - 1], verts[verts.len() - 2]);
    ChainPath::with_outer(before, verts, after)
}

/// Scaled residual `|lhs - sum(terms)| / max(1, |lhs|, sum |terms|)`.
fn scaled_residual(lhs: f64, terms: &[f64]) -> f64 {
    let sum: f64 = terms.iter().sum();
    let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(lhs.abs()).max(1.0);
    (lhs - sum).abs() / scale
}

fn one_step_residual(f: &ChainFactors, l: usize) -> f64 {
    let lhs = (2.0 * f.zeta_at(l) + 2.0 * f.next_to(l)).sinh();
    let a = (2.0 * f.zeta_at(l)).sinh() * (2.0 * f.next_to(l)).cosh();
    let b = f.u_factor(l) * f.link(l).tanh() * (2.0 * f.zeta_at(l + 1) + 2.0 * f.next_to(l + 1)).sinh();
    scaled_residual(lhs, &[a, b])
}

/// Left-end expansion: every `U` product from `v_1` outwards.
fn forward_expansion_residual(f: &ChainFactors) -> f64 {
    let n = f.n();
    let lhs = (2.0 * f.zeta_at(1) + 2.0 * f.next_to(1)).sinh();
    let mut terms = Vec::with_capacity(n);
    let mut u_prod = 1.0;
    for l in 1..n {
        terms.push((2.0 * f.zeta_at(l)).sinh() * (2.0 * f.next_to(l)).cosh() * f.chain_weight(1, l) * u_prod);
        u_prod *= f.u_factor(l);
    }
    terms.push((2.0 * f.zeta_at(n) + 2.0 * f.next_to(n)).sinh() * f.chain_weight(1, n) * u_prod);
    scaled_residual(lhs, &terms)
}

/// Right-end expansion: every `V` product from `v_n` inwards.
fn backward_expansion_residual(f: &ChainFactors) -> f64 {
    let n = f.n();
    let lhs = (2.0 * f.zeta_at(n) + 2.0 * f.prev_to(n)).sinh();
    let mut terms = Vec::with_capacity(n);
    let mut v_prod = 1.0;
    for l in (2..=n).rev() {
        terms.push((2.0 * f.zeta_at(l)).sinh() * (2.0 * f.prev_to(l)).cosh() * f.chain_weight(l, n) * v_prod);
        v_prod *= f.v_factor(l);
    }
    terms.push((2.0 * f.zeta_at(1) + 2.0 * f.prev_to(1)).sinh() * f.chain_weight(1, n) * v_prod);
    scaled_residual(lhs, &terms)
}

/// Sizes of [`suite_identities`].
#[derive(Clone, Copy, Debug)]
pub struct IdentityTrials {
    /// Random chains for the expansion identities.
    pub chains: usize,
    /// Minimum number of directed-edge trials for the inequalities.
    pub edges: usize,
}

impl Default for IdentityTrials {
    fn default() -> Self {
        IdentityTrials { chains: 1000, edges: 10_000 }
    }
}

// Floating-point slack for exact inequalities: a few ulps, never a statistical allowance.
fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + 1e-12) + 1e-15
}

/// Expansion identities, the `W` bound, the message bound and the contraction inequality.
pub fn suite_identities(trials: IdentityTrials, seed: u64) -> Result<GofReport> {
    let mut rng = instance_stream(seed, 2);
    let spec = InstanceSpec::identity_sized();
    let (mut step, mut fwd, mut bwd) = (MaxDev::default(), MaxDev::default(), MaxDev::default());
    let (mut w_checked, mut w_viol, mut w_ratio) = (0usize, 0usize, 0.0f64);
    for _ in 0..trials.chains {
        let Instance { topo, couplings, fields } = random_instance(&mut rng, &spec)?;
        let msgs = compute_messages(&topo, &couplings, &fields)?;
        let path = random_chain(&mut rng, &topo);
        let n = path.vertices.len();
        let l = 1 + (rng.next_u64() % n as u64) as usize;
        let r = l + (rng.next_u64() % (n - l + 1) as u64) as usize;
        let f = chain_factors(&topo, &couplings, &msgs, &path, l, r)?;
        for k in 1..n {
            step.add(one_step_residual(&f, k), 0.0);
        }
        fwd.add(forward_expansion_residual(&f), 0.0);
        bwd.add(backward_expansion_residual(&f), 0.0);
        let bound = f.w_bound();
        for &w in &f.w {
            w_checked += 1;
            w_ratio = w_ratio.max(w / bound);
            if !(w < bound) {
                w_viol += 1;
            }
        }
    }

    let (mut edge_trials, mut zeta_viol, mut contraction_viol) = (0usize, 0usize, 0usize);
    let (mut zeta_ratio, mut contraction_ratio) = (0.0f64, 0.0f64);
    while edge_trials < trials.edges {
        let Instance { topo, fields, .. } = random_instance(&mut rng, &spec)?;
        let beta = uniform_in(&mut rng, 0.0, spec.beta_max);
        let gamma = uniform_in(&mut rng, 0.0, beta);
        let couplings = CouplingAssignment::interpolated(&topo, beta, gamma)?;
        let theta = beta.tanh();
        // Half of the pairs are small perturbations, where the inequality is tightest.
        let other: Vec<f64> = if rng.next_uniform() < 0.5 {
            random_fields(&mut rng, topo.len(), spec.field_max)
        } else {
            fields.iter().map(|x| x + 1e-3 * uniform_in(&mut rng, -1.0, 1.0)).collect()
        };
        let minus = compute_messages(&topo, &couplings, &fields)?;
        let plus = compute_messages(&topo, &couplings, &other)?;
        for (u, v, z) in minus.directed_edges() {
            edge_trials += 1;
            let b = couplings.between(&topo, u, v);
            if !within(z.abs(), b) {
                zeta_viol += 1;
            }
            if b > 0.0 {
                zeta_ratio = zeta_ratio.max(z.abs() / b);
            }
            let lhs = (z - plus.message(u, v).unwrap()).abs().tanh();
            let inner: f64 = fields[u] - other[u]
                + topo
                    .neighbors(u)
                    .filter(|&w| w != v)
                    .map(|w| minus.message(w, u).unwrap() - plus.message(w, u).unwrap())
                    .sum::<f64>();
            let rhs = 2.0 * theta * inner.abs().tanh();
            if !within(lhs, rhs) {
                contraction_viol += 1;
            }
            if rhs > 0.0 {
                contraction_ratio = contraction_ratio.max(lhs / rhs);
            }
        }
    }

    let checks = vec![
        Check::at_most("one_step_expansion", step.0, 1e-10, "scaled residual, every link of every chain"),
        Check::at_most("forward_expansion", fwd.0, 1e-9, "telescoped with U products"),
        Check::at_most("backward_expansion", bwd.0, 1e-9, "telescoped with V products"),
        Check::flag(
            "w_bound",
            w_viol == 0,
            Some(w_ratio),
            format!("{w_viol} violations in {w_checked} factors; value is max W/bound"),
        ),
        Check::flag(
            "message_bound",
            zeta_viol == 0,
            Some(zeta_ratio),
            format!("{zeta_viol} violations in {edge_trials} directed edges; value is max |zeta|/beta"),
        ),
        Check::flag(
            "bp_contraction",
            contraction_viol == 0,
            Some(contraction_ratio),
            format!("{contraction_viol} violations in {edge_trials} directed edges; value is max lhs/rhs"),
        ),
    ];
    Ok(GofReport::new(
        "identities",
        params(&[("chains", trials.chains as f64), ("edge_trials", edge_trials as f64), ("seed", seed as f64)]),
        checks,
    ))
}

/// Zero-field covariance law, Jacobian and coupling-derivative checks, symmetry and monotonicity.
pub fn suite_covariance_laws(instances: usize, seed: u64) -> Result<GofReport> {
    let mut rng = instance_stream(seed, 3);
    let zero_field = {
        let topo = build_tree(3, 2)?;
        let mut dev = MaxDev::default();
        for theta in [0.0f64, 0.2, 0.5, 0.9] {
            let c = CouplingAssignment::uniform(&topo, theta.atanh())?;
            let msgs = compute_messages(&topo, &c, &vec![0.0; topo.len()])?;
            for u in 0..topo.len() {
                for v in 0..topo.len() {
                    let expected = theta.powi(topo.distance_idx(u, v) as i32);
                    dev.add(pair_covariance(&topo, &c, &msgs, u, v), expected);
                }
            }
        }
        dev.0
    };
    let spec = InstanceSpec::identity_sized();
    let h = 1e-5;
    let (mut jac, mut odd, mut even, mut min_entry, mut dgamma) =
        (MaxDev::default(), MaxDev::default(), MaxDev::default(), f64::INFINITY, MaxDev::default());
    for _ in 0..instances {
        let Instance { topo, fields, .. } = random_instance(&mut rng, &spec)?;
        let beta = uniform_in(&mut rng, 0.0, spec.beta_max);
        let gamma = uniform_in(&mut rng, 0.01, beta.max(0.02));
        let couplings = CouplingAssignment::interpolated(&topo, beta.max(gamma), gamma)?;
        let n = topo.len();
        let m = covariance_matrix(&topo, &couplings, &fields)?;
        for u in 0..n {
            let mut xp = fields.clone();
            let mut xm = fields.clone();
            xp[u] += h;
            xm[u] -= h;
            let fp = drift_vector(&topo, &couplings, &xp)?;
            let fm = drift_vector(&topo, &couplings, &xm)?;
            for v in 0..n {
                jac.add((fp[v] - fm[v]) / (2.0 * h), m.get(v, u));
            }
        }
        let neg: Vec<f64> = fields.iter().map(|x| -x).collect();
        let f = drift_vector(&topo, &couplings, &fields)?;
        let fneg = drift_vector(&topo, &couplings, &neg)?;
        for (a, b) in f.iter().zip(&fneg) {
            odd.add(*a, -b);
        }
        let mneg = covariance_matrix(&topo, &couplings, &neg)?;
        for (a, b) in m.data.iter().zip(&mneg.data) {
            even.add(*a, *b);
        }
        min_entry = m.data.iter().cloned().fold(min_entry, f64::min);
        let nv = boundary_drift_vector(&topo, &couplings, &fields)?;
        let hg = 1e-6;
        let cp = CouplingAssignment::interpolated(&topo, beta.max(gamma + hg), gamma + hg)?;
        let cm = CouplingAssignment::interpolated(&topo, beta.max(gamma), gamma - hg)?;
        let fp = drift_vector(&topo, &cp, &fields)?;
        let fm = drift_vector(&topo, &cm, &fields)?;
        for v in 0..n {
            dgamma.add((fp[v] - fm[v]) / (2.0 * hg), nv[v]);
        }
    }
    let checks = vec![
        Check::at_most("zero_field_covariance", zero_field, 1e-12, "tanh(beta)^dist on d=3, depth 2"),
        Check::at_most("jacobian", jac.0, 1e-6, "central difference of the drift, step 1e-5"),
        Check::at_most("coupling_derivative", dgamma.0, 1e-6, "boundary drift vs derivative in the boundary coupling"),
        Check::at_most("odd_drift", odd.0, 1e-12, "F(-x) = -F(x)"),
        Check::at_most("even_covariance", even.0, 1e-12, "M(-x) = M(x)"),
        Check::flag("ferromagnetic_monotone", min_entry >= -1e-15, Some(min_entry), "smallest covariance entry"),
    ];
    Ok(GofReport::new("covariance_laws", params(&[("instances", instances as f64), ("seed", seed as f64)]), checks))
}
