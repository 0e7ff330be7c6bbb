//! Chain factors along a path `v_1, ..., v_n`.
//!
//! For each path vertex `v_l` the total field is split into three parts: the
//! field entering from `v_{l-1}`, the field entering from `v_{l+1}`, and
//! everything else (`zeta_l`, the external field plus off-path induced fields).
//! Optional outer vertices `v_0` and `v_{n+1}` extend the path at either end;
//! a missing outer vertex contributes a zero induced field.

use serde::Serialize;

use super::{CouplingAssignment, MessageTable};
use crate::error::{Error, Result};
use crate::topology::TreeTopology;

/// A simple path with optional outer neighbors at both ends.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainPath {
    pub before: Option<usize>,
    pub vertices: Vec<usize>,
    pub after: Option<usize>,
}

impl ChainPath {
    pub fn new(vertices: Vec<usize>) -> Self {
        ChainPath { before: None, vertices, after: None }
    }

    pub fn with_outer(before: Option<usize>, vertices: Vec<usize>, after: Option<usize>) -> Self {
        ChainPath { before, vertices, after }
    }

    fn validate(&self, topo: &TreeTopology) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 {
            return Err(Error::input("chain path is empty"));
        }
        let full: Vec<usize> = self.before.into_iter().chain(self.vertices.iter().copied()).chain(self.after).collect();
        if full.iter().any(|&v| v >= topo.len()) {
            return Err(Error::input("chain path references a vertex outside the topology"));
        }
        for w in full.windows(2) {
            if !topo.are_adjacent(w[0], w[1]) {
                return Err(Error::input(format!("vertices {} and {} are not adjacent", w[0], w[1])));
            }
        }
        // Adjacent steps never backtrack, so the walk is the unique shortest path.
        for w in full.windows(3) {
            if w[0] == w[2] {
                return Err(Error::input("chain path backtracks"));
            }
        }
        Ok(())
    }
}

/// Per-vertex fields along the chain and the requested factor lists.
#[derive(Clone, Debug, Serialize)]
pub struct ChainFactors {
    /// `zeta_l`: field at `v_l` excluding both chain neighbors (index `l - 1`).
    pub zeta: Vec<f64>,
    /// `zeta(l-1 -> l)`; zero at `l = 1` without an outer vertex.
    pub from_prev: Vec<f64>,
    /// `zeta(l+1 -> l)`; zero at `l = n` without an outer vertex.
    pub from_next: Vec<f64>,
    /// Coupling between `v_l` and `v_{l+1}` (index `l - 1`, length `n - 1`).
    pub link_beta: Vec<f64>,
    /// Largest coupling anywhere on the tree.
    pub max_beta: f64,
    pub l: usize,
    pub r: usize,
    /// `U_j` for `1 <= j < l`.
    pub u: Vec<f64>,
    /// `V_j` for `r < j <= n`.
    pub v: Vec<f64>,
    /// `W_j` for `r < j <= n`.
    pub w: Vec<f64>,
}

/// Evaluates the chain fields and `U`, `V`, `W` factors for `1 <= l <= r <= n`.
pub fn chain_factors(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    messages: &MessageTable,
    path: &ChainPath,
    l: usize,
    r: usize,
) -> Result<ChainFactors> {
    path.validate(topo)?;
    let verts = &path.vertices;
    let n = verts.len();
    if !(1 <= l && l <= r && r <= n) {
        return Err(Error::input(format!("need 1 <= l <= r <= n, got l={l}, r={r}, n={n}")));
    }
    let prev_of = |i: usize| if i == 0 { path.before } else { Some(verts[i - 1]) };
    let next_of = |i: usize| if i + 1 == n { path.after } else { Some(verts[i + 1]) };
    let mut zeta = Vec::with_capacity(n);
    let mut from_prev = Vec::with_capacity(n);
    let mut from_next = Vec::with_capacity(n);
    for (i, &v) in verts.iter().enumerate() {
        let excluded: Vec<usize> = prev_of(i).into_iter().chain(next_of(i)).collect();
        zeta.push(messages.fields()[v] + messages.induced_field_excluding(topo, v, &excluded));
        from_prev.push(prev_of(i).map_or(0.0, |p| messages.message(p, v).unwrap()));
        from_next.push(next_of(i).map_or(0.0, |q| messages.message(q, v).unwrap()));
    }
    let link_beta: Vec<f64> = verts.windows(2).map(|w| couplings.between(topo, w[0], w[1])).collect();
    let mut factors = ChainFactors {
        zeta,
        from_prev,
        from_next,
        link_beta,
        max_beta: couplings.max_beta(),
        l,
        r,
        u: Vec::new(),
        v: Vec::new(),
        w: Vec::new(),
    };
    factors.u = (1..l).map(|j| factors.u_factor(j)).collect();
    factors.v = (r + 1..=n).map(|j| factors.v_factor(j)).collect();
    factors.w = (r + 1..=n).map(|j| factors.w_factor(j, r)).collect();
    Ok(factors)
}

impl ChainFactors {
    pub fn n(&self) -> usize {
        self.zeta.len()
    }

    /// `zeta_l`, 1-based.
    pub fn zeta_at(&self, l: usize) -> f64 {
        self.zeta[l - 1]
    }

    /// `zeta(l-1 -> l)`, 1-based.
    pub fn prev_to(&self, l: usize) -> f64 {
        self.from_prev[l - 1]
    }

    /// `zeta(l+1 -> l)`, 1-based.
    pub fn next_to(&self, l: usize) -> f64 {
        self.from_next[l - 1]
    }

    /// Coupling between `v_a` and `v_{a+1}`, 1-based.
    pub fn link(&self, a: usize) -> f64 {
        self.link_beta[a - 1]
    }

    /// Product of `tanh(beta)` over the chain edges between `v_a` and `v_b`, `a <= b`.
    pub fn chain_weight(&self, a: usize, b: usize) -> f64 {
        (a..b).map(|k| self.link(k).tanh()).product()
    }

    /// `U_l` for `1 <= l < n`.
    pub fn u_factor(&self, l: usize) -> f64 {
        let b = self.link(l);
        let c = b.cosh();
        2.0 * (2.0 * self.zeta_at(l)).cosh() * c * c
            / ((2.0 * b).cosh() + (2.0 * self.zeta_at(l + 1) + 2.0 * self.next_to(l + 1)).cosh())
    }

    /// `V_l` for `1 < l <= n`.
    pub fn v_factor(&self, l: usize) -> f64 {
        let b = self.link(l - 1);
        let c = b.cosh();
        2.0 * (2.0 * self.zeta_at(l)).cosh() * c * c
            / ((2.0 * b).cosh() + (2.0 * self.zeta_at(l - 1) + 2.0 * self.prev_to(l - 1)).cosh())
    }

    /// `W_j` for `r < j <= n`.
    pub fn w_factor(&self, j: usize, r: usize) -> f64 {
        let b = self.link(j - 1);
        let c = b.cosh();
        let numerator = if j == r + 1 { 2.0 * c * c } else { 2.0 * (2.0 * self.zeta_at(j - 1)).cosh() * c * c };
        numerator / ((2.0 * b).cosh() + (2.0 * self.zeta_at(j - 1) + 2.0 * self.prev_to(j - 1)).cosh())
    }

    /// Universal upper bound on every `W_j`.
    pub fn w_bound(&self) -> f64 {
        let b = self.max_beta;
        4.0 * b.cosh() * b.cosh() * (2.0 * b).cosh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::compute_messages;
    use crate::topology::build_tree;

    #[test]
    fn u_is_one_at_zero_field() {
        let t = build_tree(3, 3).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.7).unwrap();
        let m = compute_messages(&t, &c, &vec![0.0; t.len()]).unwrap();
        let path = ChainPath::new(t.path_indices(t.len() - 1, 4));
        let n = path.vertices.len();
        let f = chain_factors(&t, &c, &m, &path, n, n).unwrap();
        assert_eq!(f.u.len(), n - 1);
        for u in &f.u {
            assert!((u - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn w_relates_to_v() {
        let t = build_tree(3, 3).unwrap();
        let c = CouplingAssignment::interpolated(&t, 0.6, 0.25).unwrap();
        let x: Vec<f64> = (0..t.len()).map(|i| ((i * 31) % 17) as f64 / 4.0 - 2.0).collect();
        let m = compute_messages(&t, &c, &x).unwrap();
        let path = ChainPath::new(t.path_indices(t.len() - 1, 9));
        let n = path.vertices.len();
        let f = chain_factors(&t, &c, &m, &path, 1, 1).unwrap();
        let r = 1;
        assert!((f.w[0] - f.v[0] / (2.0 * f.zeta_at(r + 1)).cosh()).abs() < 1e-13);
        for j in r + 2..=n {
            let expected = f.v_factor(j) * (2.0 * f.zeta_at(j - 1)).cosh() / (2.0 * f.zeta_at(j)).cosh();
            assert!((f.w_factor(j, r) - expected).abs() < 1e-12);
        }
        assert!(f.w.iter().all(|&w| w < f.w_bound()));
    }

    #[test]
    fn rejects_non_paths() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.5).unwrap();
        let m = compute_messages(&t, &c, &vec![0.1; t.len()]).unwrap();
        assert!(chain_factors(&t, &c, &m, &ChainPath::new(vec![1, 2]), 1, 1).is_err());
        assert!(chain_factors(&t, &c, &m, &ChainPath::new(vec![1, 0, 1]), 1, 1).is_err());
        assert!(chain_factors(&t, &c, &m, &ChainPath::new(vec![1, 0, 2]), 2, 1).is_err());
        assert!(chain_factors(&t, &c, &m, &ChainPath::new(vec![]), 1, 1).is_err());
    }
}
