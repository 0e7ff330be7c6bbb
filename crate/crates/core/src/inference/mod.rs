//! Exact inference for the Ising model on a finite tree with external field.
//!
//! Messages are stored as induced fields `zeta(u -> v)`, the half log-odds of the
//! belief-propagation message. On a tree one upward and one downward sweep give
//! the exact fixed point, so the drift of the SDE system (the vector of
//! magnetizations) costs `O(|V|)` per field vector.

mod chain;
mod covariance;

pub use chain::{chain_factors, ChainFactors, ChainPath};
pub use covariance::{
    boundary_drift_vector, boundary_triple_covariance, covariance_matrix, pair_covariance, pair_covariance_path_form,
    path_partition, PathQuantities, SquareMatrix,
};

use crate::error::{Error, Result};
use crate::topology::TreeTopology;

/// One external field per vertex, in topology order.
pub type FieldVector = Vec<f64>;

/// Bound applied to `atanh` arguments; the only inexact step of the sweeps.
const ATANH_CLAMP: f64 = 1.0 - 1e-15;

#[inline]
fn clamped_atanh(y: f64) -> f64 {
    y.clamp(-ATANH_CLAMP, ATANH_CLAMP).atanh()
}

/// `beta` such that `tanh(beta) = theta`.
pub fn beta_from_tanh(theta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::parameter("tanh_beta", format!("must lie in [0, 1), got {theta}")));
    }
    Ok(theta.atanh())
}

/// Per-edge inverse temperatures. Edge ids follow [`TreeTopology::edges`]:
/// entry `v` holds the coupling between `v` and its parent; entry 0 is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingAssignment {
    beta: Vec<f64>,
    theta: Vec<f64>,
}

impl CouplingAssignment {
    pub fn uniform(topo: &TreeTopology, beta: f64) -> Result<Self> {
        Self::interpolated(topo, beta, beta)
    }

    /// `beta` on interior edges, `gamma` on edges reaching the outer sphere.
    pub fn interpolated(topo: &TreeTopology, beta: f64, gamma: f64) -> Result<Self> {
        check_coupling("beta", beta)?;
        check_coupling("gamma", gamma)?;
        let per_vertex = (0..topo.len())
            .map(|v| match v {
                0 => 0.0,
                v if topo.is_boundary_edge(v) => gamma,
                _ => beta,
            })
            .collect();
        Self::from_vertex_betas(per_vertex)
    }

    /// Arbitrary couplings, one per edge in edge-id order (`topo.edge_count()` values).
    pub fn from_edges(topo: &TreeTopology, betas: &[f64]) -> Result<Self> {
        if betas.len() != topo.edge_count() {
            return Err(Error::input(format!("expected {} edge couplings, got {}", topo.edge_count(), betas.len())));
        }
        let mut per_vertex = Vec::with_capacity(topo.len());
        per_vertex.push(0.0);
        per_vertex.extend_from_slice(betas);
        Self::from_vertex_betas(per_vertex)
    }

    fn from_vertex_betas(beta: Vec<f64>) -> Result<Self> {
        for &b in &beta {
            check_coupling("beta", b)?;
        }
        let theta = beta.iter().map(|b| b.tanh()).collect();
        Ok(CouplingAssignment { beta, theta })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.len() <= 1
    }

    /// Coupling on the edge between `child` and its parent.
    pub fn beta(&self, child: usize) -> f64 {
        self.beta[child]
    }

    pub fn theta(&self, child: usize) -> f64 {
        self.theta[child]
    }

    /// Coupling between two adjacent vertices, in either order.
    pub fn between(&self, topo: &TreeTopology, u: usize, v: usize) -> f64 {
        if topo.parent(v) == Some(u) {
            self.beta[v]
        } else {
            debug_assert_eq!(topo.parent(u), Some(v), "vertices {u} and {v} are not adjacent");
            self.beta[u]
        }
    }

    pub fn max_beta(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }
}

fn check_coupling(field: &str, b: f64) -> Result<()> {
    if !b.is_finite() || b < 0.0 {
        return Err(Error::parameter(field, format!("couplings must be finite and >= 0, got {b}")));
    }
    Ok(())
}

fn check_fields(topo: &TreeTopology, fields: &[f64]) -> Result<()> {
    if fields.len() != topo.len() {
        return Err(Error::input(format!(
            "field vector has {} entries, topology has {} vertices",
            fields.len(),
            topo.len()
        )));
    }
    if let Some(i) = fields.iter().position(|x| !x.is_finite()) {
        return Err(Error::input(format!("non-finite field at vertex {i}")));
    }
    Ok(())
}

/// Induced fields for every directed edge of a tree, for one field vector.
#[derive(Clone, Debug)]
pub struct MessageTable {
    parent: Vec<Option<usize>>,
    /// `up[v]`: from `v` to its parent.
    up: Vec<f64>,
    /// `down[v]`: from the parent of `v` to `v`.
    down: Vec<f64>,
    /// Field at `v` plus every incoming induced field.
    total: Vec<f64>,
    fields: FieldVector,
}

/// Exact messages by one leaf-to-center and one center-to-leaf sweep.
pub fn compute_messages(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<MessageTable> {
    check_fields(topo, fields)?;
    if couplings.len() != topo.len() {
        return Err(Error::input("coupling assignment does not match topology"));
    }
    let n = topo.len();
    let parent: Vec<Option<usize>> = (0..n).map(|v| topo.parent(v)).collect();
    let mut up = vec![0.0; n];
    let mut down = vec![0.0; n];
    let mut total = vec![0.0; n];
    let mut child_sum = vec![0.0; n];
    for v in (1..n).rev() {
        up[v] = clamped_atanh(couplings.theta(v) * (fields[v] + child_sum[v]).tanh());
        child_sum[parent[v].unwrap()] += up[v];
    }
    total[0] = fields[0] + child_sum[0];
    for v in 1..n {
        let p = parent[v].unwrap();
        down[v] = clamped_atanh(couplings.theta(v) * (total[p] - up[v]).tanh());
        total[v] = fields[v] + child_sum[v] + down[v];
    }
    Ok(MessageTable { parent, up, down, total, fields: fields.to_vec() })
}

impl MessageTable {
    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// `zeta(u -> v)`; `None` when `u` and `v` are not adjacent.
    pub fn message(&self, u: usize, v: usize) -> Option<f64> {
        if self.parent[u] == Some(v) {
            Some(self.up[u])
        } else if self.parent[v] == Some(u) {
            Some(self.down[v])
        } else {
            None
        }
    }

    /// Field at `v` plus all incoming induced fields.
    pub fn total_field(&self, v: usize) -> f64 {
        self.total[v]
    }

    /// `<sigma_v>` under the field the table was computed for.
    pub fn magnetization(&self, v: usize) -> f64 {
        self.total[v].tanh()
    }

    /// Sum of the induced fields entering `v` from neighbors outside `excluded`.
    pub fn induced_field_excluding(&self, topo: &TreeTopology, v: usize, excluded: &[usize]) -> f64 {
        topo.neighbors(v)
            .filter(|w| !excluded.contains(w))
            .map(|w| self.message(w, v).expect("neighbors are adjacent"))
            .sum()
    }

    /// Every directed edge `(u, v)` with its induced field.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (1..self.parent.len()).flat_map(move |v| {
            let p = self.parent[v].unwrap();
            [(v, p, self.up[v]), (p, v, self.down[v])]
        })
    }
}

/// `<sigma_v>` for a message table.
pub fn magnetization(messages: &MessageTable, v: usize) -> f64 {
    messages.magnetization(v)
}

/// The SDE drift: the vector of magnetizations under `fields`.
pub fn drift_vector(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<FieldVector> {
    let table = compute_messages(topo, couplings, fields)?;
    Ok((0..topo.len()).map(|v| table.magnetization(v)).collect())
}

/// Allocation-free drift evaluation for inner loops.
///
/// Works with `exp(2 zeta)` instead of `zeta`: a message is then a rational
/// function of the sender's exponentiated field, so one `exp` per vertex
/// replaces the `tanh`/`atanh` pairs of [`compute_messages`].
#[derive(Clone, Debug)]
pub struct DriftEngine {
    parent: Vec<u32>,
    /// `(1 + theta, 1 - theta)` of the edge to the parent.
    edge: Vec<(f64, f64)>,
    /// `exp(2 zeta)` from `v` to its parent.
    up: Vec<f64>,
    /// `exp(2 (x + incoming from children))`.
    subtree: Vec<f64>,
    /// `exp(2 * total field)`.
    total: Vec<f64>,
}

/// Fields beyond this magnitude saturate every message and magnetization in
/// double precision; clamping keeps the exponentials finite.
const FIELD_CLAMP: f64 = 200.0;

/// `exp(2 zeta)` of a message across an edge, given `exp(2 h)` of the sender's cavity field.
#[inline]
fn edge_ratio((a, b): (f64, f64), e: f64) -> f64 {
    (a * e + b) / (b * e + a)
}

impl DriftEngine {
    pub fn new(topo: &TreeTopology, couplings: &CouplingAssignment) -> Result<Self> {
        if couplings.len() != topo.len() {
            return Err(Error::input("coupling assignment does not match topology"));
        }
        let n = topo.len();
        Ok(DriftEngine {
            parent: (0..n).map(|v| topo.parent(v).unwrap_or(0) as u32).collect(),
            edge: (0..n).map(|v| (1.0 + couplings.theta(v), 1.0 - couplings.theta(v))).collect(),
            up: vec![1.0; n],
            subtree: vec![1.0; n],
            total: vec![1.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Writes `<sigma_v>` under `fields` into `out` for every vertex.
    pub fn evaluate(&mut self, fields: &[f64], out: &mut [f64]) {
        let n = self.parent.len();
        debug_assert!(fields.len() == n && out.len() == n);
        for (s, x) in self.subtree.iter_mut().zip(fields) {
            *s = (2.0 * x.clamp(-FIELD_CLAMP, FIELD_CLAMP)).exp();
        }
        for v in (1..n).rev() {
            let r = edge_ratio(self.edge[v], self.subtree[v]);
            self.up[v] = r;
            self.subtree[self.parent[v] as usize] *= r;
        }
        self.total[0] = self.subtree[0];
        for v in 1..n {
            let p = self.parent[v] as usize;
            let down = edge_ratio(self.edge[v], self.total[p] / self.up[v]);
            self.total[v] = self.subtree[v] * down;
        }
        for (o, e) in out.iter_mut().zip(&self.total) {
            *o = (e - 1.0) / (e + 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_tree;

    #[test]
    fn zero_field_gives_zero_messages() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.7).unwrap();
        let m = compute_messages(&t, &c, &vec![0.0; t.len()]).unwrap();
        assert!(m.directed_edges().all(|(_, _, z)| z == 0.0));
        assert!(drift_vector(&t, &c, &vec![0.0; t.len()]).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn two_vertex_message() {
        let t = build_tree(2, 1).unwrap();
        // d = 2, depth 1: root with two leaves; use leaf 1 as "u" and the root as "v".
        let beta = 0.8;
        let c = CouplingAssignment::uniform(&t, beta).unwrap();
        let xu = 1.3;
        let m = compute_messages(&t, &c, &[0.0, xu, 0.0]).unwrap();
        let expected = (beta.tanh() * xu.tanh()).atanh();
        assert!((m.message(1, 0).unwrap() - expected).abs() < 1e-15);
        assert!(m.message(1, 2).is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = build_tree(3, 1).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.3).unwrap();
        assert!(compute_messages(&t, &c, &[0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(compute_messages(&t, &c, &[0.0; 3]).is_err());
        assert!(CouplingAssignment::uniform(&t, -0.1).is_err());
        assert!(beta_from_tanh(1.0).is_err());
    }

    #[test]
    fn gamma_zero_decouples_outer_sphere() {
        let big = build_tree(3, 3).unwrap();
        let small = build_tree(3, 2).unwrap();
        let fields: Vec<f64> = (0..big.len()).map(|i| ((i * 7919) % 13) as f64 / 3.0 - 2.0).collect();
        let f_big = drift_vector(&big, &CouplingAssignment::interpolated(&big, 0.6, 0.0).unwrap(), &fields).unwrap();
        let f_small =
            drift_vector(&small, &CouplingAssignment::uniform(&small, 0.6).unwrap(), &fields[..small.len()]).unwrap();
        for v in 0..small.len() {
            assert!((f_big[v] - f_small[v]).abs() < 1e-15);
        }
    }

    #[test]
    fn engine_matches_table() {
        let t = build_tree(4, 3).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.4).unwrap();
        let fields: Vec<f64> = (0..t.len()).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let mut engine = DriftEngine::new(&t, &c).unwrap();
        let mut out = vec![0.0; t.len()];
        engine.evaluate(&fields, &mut out);
        let reference = drift_vector(&t, &c, &fields).unwrap();
        for v in 0..t.len() {
            assert!((out[v] - reference[v]).abs() < 1e-14);
        }
        let huge: Vec<f64> = (0..t.len()).map(|i| if i % 2 == 0 { 1e6 } else { -1e300 }).collect();
        engine.evaluate(&huge, &mut out);
        for v in 0..t.len() {
            assert_eq!(out[v], if v % 2 == 0 { 1.0 } else { -1.0 });
        }
    }
}
