//! Exhaustive enumeration of the Ising measure with external field.

use crate::error::{Error, Result};
use crate::inference::CouplingAssignment;
use crate::topology::TreeTopology;

/// Hard cap on the enumerated vertex count.
pub const MAX_ORACLE_VERTICES: usize = 20;

/// Exact law of a small tree Ising model; configuration `s` has spin `+1` at
/// vertex `v` iff bit `v` of `s` is set.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub n: usize,
    pub log_z: f64,
    pub probabilities: Vec<f64>,
    pub means: Vec<f64>,
    /// Row-major `n x n` covariance matrix.
    pub pair_cov: Vec<f64>,
}

#[inline]
fn spin(s: usize, v: usize) -> f64 {
    if s >> v & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn energies(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64], order: &[usize]) -> Vec<f64> {
    let edges: Vec<(usize, usize, f64)> = topo.edges().map(|e| (e.parent, e.child, couplings.beta(e.child))).collect();
    order
        .iter()
        .map(|&s| {
            let mut e = 0.0;
            for &(a, b, beta) in &edges {
                e += beta * spin(s, a) * spin(s, b);
            }
            for (v, x) in fields.iter().enumerate() {
                e += x * spin(s, v);
            }
            e
        })
        .collect()
}

fn check_size(topo: &TreeTopology) -> Result<usize> {
    let n = topo.len();
    if n > MAX_ORACLE_VERTICES {
        return Err(Error::input(format!("brute force is limited to {MAX_ORACLE_VERTICES} vertices, got {n}")));
    }
    Ok(n)
}

fn enumerate(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    fields: &[f64],
    order: Vec<usize>,
) -> Result<OracleResult> {
    let n = topo.len();
    if fields.len() != n || couplings.len() != n {
        return Err(Error::input("fields or couplings do not match topology"));
    }
    let e = energies(topo, couplings, fields, &order);
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = e.iter().map(|x| (x - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut probabilities = vec![0.0; 1 << n];
    for (&s, x) in order.iter().zip(&e) {
        probabilities[s] = (x - log_z).exp();
    }
    let mut means = vec![0.0; n];
    let mut second = vec![0.0; n * n];
    for &s in &order {
        let p = probabilities[s];
        for u in 0..n {
            let su = spin(s, u);
            means[u] += p * su;
            for v in u..n {
                second[u * n + v] += p * su * spin(s, v);
            }
        }
    }
    let mut pair_cov = vec![0.0; n * n];
    for u in 0..n {
        for v in u..n {
            let c = second[u * n + v] - means[u] * means[v];
            pair_cov[u * n + v] = c;
            pair_cov[v * n + u] = c;
        }
    }
    Ok(OracleResult { n, log_z, probabilities, means, pair_cov })
}

/// Enumerates all `2^|V|` configurations in natural order.
pub fn brute_force(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<OracleResult> {
    let n = check_size(topo)?;
    enumerate(topo, couplings, fields, (0..1usize << n).collect())
}

/// Same law, enumerated in reflected Gray-code order so every sum is accumulated differently.
pub fn brute_force_permuted(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    fields: &[f64],
) -> Result<OracleResult> {
    let n = check_size(topo)?;
    enumerate(topo, couplings, fields, (0..1usize << n).map(|i| i ^ (i >> 1)).rev().collect())
}

impl OracleResult {
    pub fn covariance(&self, u: usize, v: usize) -> f64 {
        self.pair_cov[u * self.n + v]
    }

    /// `E[sigma_a sigma_b sigma_c] - E[sigma_a sigma_b] E[sigma_c]`.
    pub fn triple_covariance(&self, a: usize, b: usize, c: usize) -> f64 {
        let (mut ab, mut abc, mut cm) = (0.0, 0.0, 0.0);
        for (s, p) in self.probabilities.iter().enumerate() {
            let x = spin(s, a) * spin(s, b);
            ab += p * x;
            abc += p * x * spin(s, c);
            cm += p * spin(s, c);
        }
        abc - ab * cm
    }

    /// Marginal law of the spins at `vertices`; entry `k` has bit `i` of `k` set iff `vertices[i]` is `+1`.
    pub fn marginal_law(&self, vertices: &[usize]) -> Vec<f64> {
        let mut law = vec![0.0; 1 << vertices.len()];
        for (s, p) in self.probabilities.iter().enumerate() {
            let k = vertices.iter().enumerate().fold(0usize, |acc, (i, &v)| acc | ((s >> v & 1) << i));
            law[k] += p;
        }
        law
    }

    pub fn total_probability(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_tree;

    #[test]
    fn single_vertex_mean_is_tanh() {
        let t = build_tree(3, 0).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.5).unwrap();
        let o = brute_force(&t, &c, &[0.7]).unwrap();
        assert!((o.means[0] - 0.7f64.tanh()).abs() < 1e-15);
        assert!((o.log_z - (2.0 * 0.7f64.cosh()).ln()).abs() < 1e-14);
    }

    #[test]
    fn orders_agree() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::interpolated(&t, 0.6, 0.2).unwrap();
        let x: Vec<f64> = (0..t.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = brute_force(&t, &c, &x).unwrap();
        let b = brute_force_permuted(&t, &c, &x).unwrap();
        assert!((a.total_probability() - 1.0).abs() < 1e-12);
        assert!((a.log_z - b.log_z).abs() < 1e-12);
        for (p, q) in a.pair_cov.iter().zip(&b.pair_cov) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_large_trees() {
        let t = build_tree(4, 3).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.1).unwrap();
        assert!(brute_force(&t, &c, &vec![0.0; t.len()]).is_err());
    }
}
