//! Euler-Maruyama integration of the magnetization-drift SDE systems under
//! vertex-keyed shared noise.
//!
//! The state of every system solves `dX = F(X) dt + dW`, `X_0 = 0`, where `F`
//! is the vector of magnetizations of the tree Ising model with external field
//! `X`. The Brownian increment of vertex `v` at step `k` depends only on the
//! seed, the replica, the label of `v` and `k`, so systems on nested or
//! overlapping balls are driven by restrictions of one common noise field.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{CouplingAssignment, DriftEngine};
use crate::rng::{label_key, purpose, RngStream};
use crate::samplers::{sample_conditional, SpinConfig};
use crate::topology::{RerootMap, TreeTopology, VertexLabel};

/// Brownian increments keyed by `(vertex label, step)`.
///
/// The noise is generated at resolution `base_dt`; a `stride > 1` sums
/// consecutive base increments, so a coarse and a fine integration of the same
/// replica see the same Brownian path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSource {
    seed: u64,
    replica: u64,
    stream: RngStream,
    base_dt: f64,
    stride: u32,
}

impl NoiseSource {
    pub fn new(seed: u64, replica: u64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::parameter("dt", format!("must be positive, got {dt}")));
        }
        Ok(NoiseSource {
            seed,
            replica,
            stream: RngStream::new(seed).derive(purpose::SDE_NOISE).derive(replica),
            base_dt: dt,
            stride: 1,
        })
    }

    /// Same Brownian path observed on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: u32) -> Self {
        assert!(factor >= 1);
        NoiseSource { stride: self.stride * factor, ..*self }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Step size of the grid this source serves.
    pub fn dt(&self) -> f64 {
        self.base_dt * f64::from(self.stride)
    }

    /// Per-vertex stream handle; cache it when drawing many steps.
    pub fn vertex_stream(&self, label: &VertexLabel) -> RngStream {
        self.stream.derive(label_key(label))
    }

    /// Base increments for steps `2k` and `2k + 1`: the two Box-Muller branches of one pair.
    #[inline]
    pub fn base_pair(&self, vertex: &RngStream, pair: u64) -> (f64, f64) {
        let u1 = vertex.uniform_at(2 * pair);
        let u2 = vertex.uniform_at(2 * pair + 1);
        let radius = (-2.0 * u1.ln()).sqrt() * self.base_dt.sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        (radius * cos, radius * sin)
    }

    #[inline]
    fn base_increment(&self, vertex: &RngStream, base_step: u64) -> f64 {
        let (even, odd) = self.base_pair(vertex, base_step / 2);
        if base_step.is_multiple_of(2) {
            even
        } else {
            odd
        }
    }

    /// Increment over grid step `step` for a cached vertex stream.
    #[inline]
    pub fn increment_with(&self, vertex: &RngStream, step: u64) -> f64 {
        let first = step * u64::from(self.stride);
        (0..u64::from(self.stride)).map(|j| self.base_increment(vertex, first + j)).sum()
    }

    pub fn increment(&self, label: &VertexLabel, step: u64) -> f64 {
        self.increment_with(&self.vertex_stream(label), step)
    }
}

/// Number of grid steps of size `dt` in `[0, t_end]`; `t_end` must be a multiple of `dt`.
pub fn step_count(t_end: f64, dt: f64) -> Result<u64> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::parameter("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::parameter("t_end", format!("{t_end} is not a multiple of dt = {dt}")));
    }
    Ok(steps as u64)
}

/// Reproducibility metadata carried by a trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryMeta {
    pub d: usize,
    pub depth: usize,
    pub center: VertexLabel,
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    pub seed: u64,
    pub replica: u64,
}

/// States on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub labels: Vec<VertexLabel>,
    pub dt: f64,
    /// Row `k` is the state at time `k * dt`.
    states: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn steps(&self) -> usize {
        self.states.len() / self.labels.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let n = self.labels.len();
        &self.states[k * n..(k + 1) * n]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.steps())
    }

    /// Grid index of time `t`, if `t` is a grid point.
    pub fn index_of_time(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        ((k * self.dt - t).abs() <= 1e-9 * t.max(1.0) && k >= 0.0 && k as usize <= self.steps()).then_some(k as usize)
    }

    /// CSV with columns `time,vertex_label,value`, one row per grid time and vertex.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,vertex_label,value")?;
        for k in 0..=self.steps() {
            let t = self.time(k);
            for (label, value) in self.labels.iter().zip(self.state(k)) {
                writeln!(out, "{t},{label},{value}")?;
            }
        }
        Ok(())
    }
}

/// A drift system with its per-vertex noise streams.
pub struct SdeSystem {
    engine: DriftEngine,
    streams: Vec<RngStream>,
    noise: NoiseSource,
    state: Vec<f64>,
    drift: Vec<f64>,
    /// Increments for the next two base steps when `noise` is not coarsened.
    pending: Vec<f64>,
    step: u64,
}

impl SdeSystem {
    pub fn new(topo: &TreeTopology, couplings: &CouplingAssignment, noise: &NoiseSource) -> Result<Self> {
        let n = topo.len();
        Ok(SdeSystem {
            engine: DriftEngine::new(topo, couplings)?,
            streams: topo.labels().iter().map(|l| noise.vertex_stream(l)).collect(),
            noise: *noise,
            state: vec![0.0; n],
            drift: vec![0.0; n],
            pending: vec![0.0; n],
            step: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.noise.dt()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Drift at the current state (valid after the last `advance`).
    pub fn current_drift(&mut self) -> &[f64] {
        self.engine.evaluate(&self.state, &mut self.drift);
        &self.drift
    }

    /// One Euler-Maruyama step with the drift at the left endpoint.
    pub fn advance(&mut self) {
        let dt = self.noise.dt();
        self.engine.evaluate(&self.state, &mut self.drift);
        if self.noise.stride == 1 {
            // Each pair of normals is generated once and consumed over two steps.
            let even = self.step.is_multiple_of(2);
            for (((x, f), s), p) in self.state.iter_mut().zip(&self.drift).zip(&self.streams).zip(&mut self.pending) {
                let w = if even {
                    let (a, b) = self.noise.base_pair(s, self.step / 2);
                    *p = b;
                    a
                } else {
                    *p
                };
                *x += f * dt + w;
            }
        } else {
            for ((x, f), s) in self.state.iter_mut().zip(&self.drift).zip(&self.streams) {
                *x += f * dt + self.noise.increment_with(s, self.step);
            }
        }
        self.step += 1;
        debug_assert!(self.state.iter().all(|x| x.is_finite()));
    }

    pub fn advance_to_step(&mut self, step: u64) {
        while self.step < step {
            self.advance();
        }
    }
}

fn meta_for(topo: &TreeTopology, couplings: &CouplingAssignment, noise: &NoiseSource) -> TrajectoryMeta {
    let interior = topo.boundary_edges().interior.first().map(|e| couplings.beta(e.child));
    let boundary = topo.boundary_edges().boundary.first().map(|e| couplings.beta(e.child));
    let beta = interior.or(boundary).unwrap_or(0.0);
    TrajectoryMeta {
        d: topo.d(),
        depth: topo.depth(),
        center: topo.center().clone(),
        beta,
        gamma: boundary.unwrap_or(beta),
        dt: noise.dt(),
        seed: noise.seed(),
        replica: noise.replica(),
    }
}

/// Integrates `dX = F(X) dt + dW` from `X_0 = 0` to `t_end` on the grid of `noise`.
pub fn integrate(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    noise: &NoiseSource,
    t_end: f64,
) -> Result<Trajectory> {
    let steps = step_count(t_end, noise.dt())?;
    let mut system = SdeSystem::new(topo, couplings, noise)?;
    let n = topo.len();
    let mut states = Vec::with_capacity((steps as usize + 1) * n);
    states.extend_from_slice(system.state());
    for _ in 0..steps {
        system.advance();
        states.extend_from_slice(system.state());
    }
    if states.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite SDE state".into()));
    }
    Ok(Trajectory { labels: topo.labels().to_vec(), dt: noise.dt(), states, meta: meta_for(topo, couplings, noise) })
}

/// The system with coupling `beta` inside and `gamma` on edges to the outer sphere.
pub fn integrate_interpolated(
    topo: &TreeTopology,
    beta: f64,
    gamma: f64,
    noise: &NoiseSource,
    t_end: f64,
) -> Result<Trajectory> {
    if !(0.0..=beta).contains(&gamma) {
        return Err(Error::parameter("gamma", format!("must lie in [0, beta = {beta}], got {gamma}")));
    }
    integrate(topo, &CouplingAssignment::interpolated(topo, beta, gamma)?, noise, t_end)
}

/// The system on the re-centered ball; shared vertices consume the same noise.
pub fn integrate_rerooted(
    map: &RerootMap,
    couplings: &CouplingAssignment,
    noise: &NoiseSource,
    t_end: f64,
) -> Result<Trajectory> {
    integrate(&map.target, couplings, noise, t_end)
}

/// Spin sample plus independent Brownian motion: `Xbar_t = t * tau + B_t`.
#[derive(Clone, Debug)]
pub struct ReferencePair {
    pub tau: SpinConfig,
    pub dt: f64,
    /// Row `k` is `B` at time `k * dt`.
    brownian: Vec<f64>,
}

impl ReferencePair {
    pub fn steps(&self) -> usize {
        self.brownian.len() / self.tau.len() - 1
    }

    pub fn brownian(&self, k: usize) -> &[f64] {
        let n = self.tau.len();
        &self.brownian[k * n..(k + 1) * n]
    }

    /// `Xbar` at grid index `k`.
    pub fn xbar(&self, k: usize) -> Vec<f64> {
        let t = k as f64 * self.dt;
        self.brownian(k).iter().zip(self.tau.spins()).map(|(b, &s)| t * f64::from(s) + b).collect()
    }
}

/// Draws `tau` from the zero-field Ising measure and an independent Brownian path.
pub fn reference_pair(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    seed: u64,
    replica: u64,
    t_end: f64,
    dt: f64,
) -> Result<ReferencePair> {
    let steps = step_count(t_end, dt)? as usize;
    let root = RngStream::new(seed).derive(replica);
    let tau = sample_conditional(topo, couplings, &vec![0.0; topo.len()], &root.derive(purpose::REFERENCE_SPINS))?;
    let brown = root.derive(purpose::REFERENCE_BROWNIAN);
    let n = topo.len();
    let streams: Vec<RngStream> = topo.labels().iter().map(|l| brown.for_label(l)).collect();
    let mut brownian = vec![0.0; (steps + 1) * n];
    let scale = dt.sqrt();
    for k in 1..=steps {
        for v in 0..n {
            brownian[k * n + v] = brownian[(k - 1) * n + v] + scale * streams[v].normal_at(k as u64);
        }
    }
    Ok(ReferencePair { tau, dt, brownian })
}

/// Finite-difference approximation of the derivative in `gamma` of the
/// interpolated system, with both branches driven by the same noise.
#[derive(Clone, Debug)]
pub struct GammaDerivative {
    pub gamma: f64,
    pub delta: f64,
    /// Trajectory at `gamma` itself.
    pub center: Trajectory,
    /// `dY/dgamma` at each grid time, row-major like [`Trajectory`].
    h: Vec<f64>,
}

impl GammaDerivative {
    pub fn h(&self, k: usize) -> &[f64] {
        let n = self.center.vertex_count();
        &self.h[k * n..(k + 1) * n]
    }

    pub fn steps(&self) -> usize {
        self.center.steps()
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Default finite-difference step in `gamma`.
pub fn default_delta_gamma(beta: f64) -> f64 {
    (1e-3f64).min(beta / 10.0)
}

/// Central difference in `gamma`; one-sided at `gamma = 0` and `gamma = beta`.
pub fn finite_diff_h(
    topo: &TreeTopology,
    beta: f64,
    gamma: f64,
    delta: f64,
    noise: &NoiseSource,
    t_end: f64,
) -> Result<GammaDerivative> {
    if !(delta > 0.0) || delta > beta {
        return Err(Error::parameter("delta_gamma", format!("must lie in (0, beta], got {delta}")));
    }
    if !(0.0..=beta).contains(&gamma) {
        return Err(Error::parameter("gamma", format!("must lie in [0, beta = {beta}], got {gamma}")));
    }
    let lo = (gamma - delta).max(0.0);
    let hi = (gamma + delta).min(beta);
    if hi - lo < delta {
        return Err(Error::parameter("delta_gamma", "degenerate finite-difference stencil"));
    }
    let center = integrate_interpolated(topo, beta, gamma, noise, t_end)?;
    let upper = integrate_interpolated(topo, beta, hi, noise, t_end)?;
    let lower = integrate_interpolated(topo, beta, lo, noise, t_end)?;
    let width = hi - lo;
    let h = upper.states.iter().zip(&lower.states).map(|(a, b)| (a - b) / width).collect();
    Ok(GammaDerivative { gamma, delta, center, h })
}

/// Sign with `sign(0) = +1`.
pub fn spin_sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// `G_n(u) = sign(X_{2^n}(u))` for `n = 0..=m_max`, restricted to `vertices`.
pub fn factor_signs(trajectory: &Trajectory, m_max: u32, vertices: &[usize]) -> Result<Vec<Vec<i8>>> {
    (0..=m_max)
        .map(|n| {
            let t = f64::from(1u32 << n);
            let k = trajectory
                .index_of_time(t)
                .ok_or_else(|| Error::parameter("m_max", format!("time {t} is not on the trajectory grid")))?;
            let state = trajectory.state(k);
            Ok(vertices.iter().map(|&v| spin_sign(state[v])).collect())
        })
        .collect()
}
