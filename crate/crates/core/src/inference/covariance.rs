//! Closed-form covariances on trees, written through path partition functions.

use serde::Serialize;

use super::{compute_messages, CouplingAssignment, MessageTable};
use crate::error::{Error, Result};
use crate::topology::{Edge, TreeTopology};

/// Partition-function data of the measure restricted to a path.
#[derive(Clone, Debug, Serialize)]
pub struct PathQuantities {
    /// Vertex indices along the path.
    pub path: Vec<usize>,
    /// Couplings on consecutive path edges.
    pub path_beta: Vec<f64>,
    /// Induced field on each path vertex from neighbors off the path.
    pub induced: Vec<f64>,
    /// Effective vertex field `x(w) + induced(w)`.
    pub vertex_field: Vec<f64>,
    pub log_z: f64,
    pub log_z_zero: f64,
    /// `exp(log_z - log_z_zero)`, always >= 1.
    pub z_bar: f64,
    /// Product of `tanh(beta)` along the path.
    pub chain_weight: f64,
}

impl PathQuantities {
    /// Probability of the path spin configuration `spins` under the restricted law.
    pub fn config_probability(&self, spins: &[i8]) -> f64 {
        assert_eq!(spins.len(), self.path.len());
        let mut energy = 0.0;
        for (i, &s) in spins.iter().enumerate() {
            energy += self.vertex_field[i] * f64::from(s);
            if i + 1 < spins.len() {
                energy += self.path_beta[i] * f64::from(s) * f64::from(spins[i + 1]);
            }
        }
        (energy - self.log_z).exp()
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log partition function of a chain with couplings `betas` and vertex fields `h`.
fn chain_log_partition(betas: &[f64], h: &[f64]) -> f64 {
    // alpha[0] for spin -1, alpha[1] for spin +1
    let mut alpha = [-h[0], h[0]];
    for (i, &b) in betas.iter().enumerate() {
        let hn = h[i + 1];
        let minus = log_sum_exp(alpha[0] + b, alpha[1] - b) - hn;
        let plus = log_sum_exp(alpha[0] - b, alpha[1] + b) + hn;
        alpha = [minus, plus];
    }
    log_sum_exp(alpha[0], alpha[1])
}

/// Restricted partition function along the path from `u` to `v`.
pub fn path_partition(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    messages: &MessageTable,
    u: usize,
    v: usize,
) -> PathQuantities {
    let path = topo.path_indices(u, v);
    let path_beta: Vec<f64> = path.windows(2).map(|w| couplings.between(topo, w[0], w[1])).collect();
    let induced: Vec<f64> = path
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let mut on_path = Vec::with_capacity(2);
            if i > 0 {
                on_path.push(path[i - 1]);
            }
            if i + 1 < path.len() {
                on_path.push(path[i + 1]);
            }
            messages.induced_field_excluding(topo, w, &on_path)
        })
        .collect();
    let vertex_field: Vec<f64> = path.iter().zip(&induced).map(|(&w, z)| messages.fields()[w] + z).collect();
    let log_z = chain_log_partition(&path_beta, &vertex_field);
    let log_z_zero = chain_log_partition(&path_beta, &vec![0.0; path.len()]);
    let chain_weight = path_beta.iter().map(|b| b.tanh()).product();
    PathQuantities {
        z_bar: (log_z - log_z_zero).exp(),
        path,
        path_beta,
        induced,
        vertex_field,
        log_z,
        log_z_zero,
        chain_weight,
    }
}

/// `Cov(sigma_u, sigma_v)`. The diagonal uses `1 - <sigma_u>^2` directly.
pub fn pair_covariance(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    messages: &MessageTable,
    u: usize,
    v: usize,
) -> f64 {
    if u == v {
        let m = messages.magnetization(u);
        return 1.0 - m * m;
    }
    pair_covariance_path_form(topo, couplings, messages, u, v)
}

/// `A(u, v) / Zbar(u, v)^2`, for any pair including `u == v`.
pub fn pair_covariance_path_form(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    messages: &MessageTable,
    u: usize,
    v: usize,
) -> f64 {
    let q = path_partition(topo, couplings, messages, u, v);
    q.chain_weight / (q.z_bar * q.z_bar)
}

/// `Cov(sigma_u sigma_u', sigma_v)` for a boundary edge `(u, u')` with `u'` on the outer sphere.
pub fn boundary_triple_covariance(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    messages: &MessageTable,
    edge: Edge,
    v: usize,
) -> Result<f64> {
    let Edge { parent: u, child: leaf } = edge;
    if leaf >= topo.len() || topo.parent(leaf) != Some(u) || !topo.is_boundary_edge(leaf) {
        return Err(Error::input(format!("({u}, {leaf}) is not a boundary edge")));
    }
    let gamma = couplings.beta(leaf);
    let cosh_g = gamma.cosh();
    let denom_scale = 2.0 * cosh_g * cosh_g;
    let x = messages.fields();
    if v != leaf {
        let to_v = path_partition(topo, couplings, messages, leaf, v);
        let a_uv: f64 = to_v.path_beta[1..].iter().map(|b| b.tanh()).product();
        Ok((2.0 * x[leaf]).sinh() * a_uv / (denom_scale * to_v.z_bar * to_v.z_bar))
    } else {
        let edge_path = path_partition(topo, couplings, messages, leaf, u);
        let zeta_u = edge_path.induced[1];
        Ok((2.0 * x[u] + 2.0 * zeta_u).sinh() / (denom_scale * edge_path.z_bar * edge_path.z_bar))
    }
}

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// All pair covariances; equals the Jacobian of the drift.
pub fn covariance_matrix(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<SquareMatrix> {
    let messages = compute_messages(topo, couplings, fields)?;
    let n = topo.len();
    let mut m = SquareMatrix::zeros(n);
    for u in 0..n {
        for v in u..n {
            let c = pair_covariance(topo, couplings, &messages, u, v);
            m.set(u, v, c);
            m.set(v, u, c);
        }
    }
    Ok(m)
}

/// `N(v)`: sum of the boundary triple covariances over all boundary edges.
pub fn boundary_drift_vector(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<Vec<f64>> {
    let messages = compute_messages(topo, couplings, fields)?;
    let boundary = topo.boundary_edges().boundary;
    (0..topo.len())
        .map(|v| boundary.iter().map(|&e| boundary_triple_covariance(topo, couplings, &messages, e, v)).sum())
        .collect()
}
