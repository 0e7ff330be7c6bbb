//! Ising configurations on trees: broadcasting, exact field-conditional
//! sampling, and continuous-time heat-bath Glauber dynamics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{compute_messages, CouplingAssignment, SquareMatrix};
use crate::rng::{purpose, RngStream};
use crate::topology::TreeTopology;

/// One spin in `{-1, +1}` per vertex, in topology order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpinConfig(pub Vec<i8>);

impl SpinConfig {
    pub fn all(n: usize, spin: i8) -> Self {
        SpinConfig(vec![spin; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    /// Bit `v` set iff vertex `v` is `+1`.
    pub fn to_bits(&self) -> u64 {
        self.0.iter().enumerate().fold(0, |acc, (v, &s)| if s > 0 { acc | (1 << v) } else { acc })
    }

    pub fn from_bits(bits: u64, n: usize) -> Self {
        SpinConfig((0..n).map(|v| if bits >> v & 1 == 1 { 1 } else { -1 }).collect())
    }
}

/// Recursive broadcast: uniform root spin, each child copies its parent with
/// probability `(1 + theta) / 2`.
pub fn sample_broadcast(topo: &TreeTopology, theta: f64, rng: &RngStream) -> Result<SpinConfig> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::parameter("tanh_beta", format!("must lie in [0, 1), got {theta}")));
    }
    let rng = rng.derive(purpose::BROADCAST);
    let keep = 0.5 * (1.0 + theta);
    let mut spins = vec![0i8; topo.len()];
    for v in 0..topo.len() {
        let u = rng.for_label(topo.label(v)).uniform_at(0);
        spins[v] = match topo.parent(v) {
            None => {
                if u < 0.5 {
                    1
                } else {
                    -1
                }
            }
            Some(p) => {
                if u < keep {
                    spins[p]
                } else {
                    -spins[p]
                }
            }
        };
    }
    Ok(SpinConfig(spins))
}

/// Exact sample from the Ising measure with external field: the center from its
/// marginal, then every child from its conditional law given the parent.
pub fn sample_conditional(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    fields: &[f64],
    rng: &RngStream,
) -> Result<SpinConfig> {
    let messages = compute_messages(topo, couplings, fields)?;
    let rng = rng.derive(purpose::CONDITIONAL);
    let mut spins = vec![0i8; topo.len()];
    for v in 0..topo.len() {
        let u = rng.for_label(topo.label(v)).uniform_at(0);
        let p_plus = match topo.parent(v) {
            None => 0.5 * (1.0 + messages.total_field(v).tanh()),
            Some(p) => {
                // Field on v from its own subtree, excluding the parent side.
                let own = messages.total_field(v) - messages.message(p, v).unwrap();
                0.5 * (1.0 + (couplings.beta(v) * f64::from(spins[p]) + own).tanh())
            }
        };
        spins[v] = if u < p_plus { 1 } else { -1 };
    }
    Ok(SpinConfig(spins))
}

fn local_field(topo: &TreeTopology, couplings: &CouplingAssignment, spins: &[i8], v: usize) -> f64 {
    topo.neighbors(v).map(|u| couplings.between(topo, u, v) * f64::from(spins[u])).sum()
}

/// Heat-bath probability of `+1` at `v` given its neighbors.
pub fn heat_bath_plus(topo: &TreeTopology, couplings: &CouplingAssignment, spins: &[i8], v: usize) -> f64 {
    0.5 * (1.0 + local_field(topo, couplings, spins, v).tanh())
}

#[derive(Clone, Copy, Debug)]
struct ClockEvent {
    time: f64,
    vertex: usize,
}

impl PartialEq for ClockEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ClockEvent {}

impl PartialOrd for ClockEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ClockEvent {
    // Reversed so the max-heap pops the earliest event; ties go to the lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Rate-one Poisson clocks, one per vertex, each driven by its own label stream.
struct PoissonClocks {
    heap: BinaryHeap<ClockEvent>,
    streams: Vec<RngStream>,
}

impl PoissonClocks {
    fn new(topo: &TreeTopology, rng: &RngStream) -> Self {
        let mut streams: Vec<RngStream> = topo.labels().iter().map(|l| rng.for_label(l)).collect();
        let heap = streams
            .iter_mut()
            .enumerate()
            .map(|(vertex, s)| ClockEvent { time: s.next_exponential(1.0), vertex })
            .collect();
        PoissonClocks { heap, streams }
    }

    /// Next update `(time, vertex, uniform)` strictly before `t_end`.
    fn next_before(&mut self, t_end: f64) -> Option<(f64, usize, f64)> {
        let ev = *self.heap.peek()?;
        if ev.time >= t_end {
            return None;
        }
        self.heap.pop();
        let s = &mut self.streams[ev.vertex];
        let u = s.next_uniform();
        self.heap.push(ClockEvent { time: ev.time + s.next_exponential(1.0), vertex: ev.vertex });
        Some((ev.time, ev.vertex, u))
    }
}

/// Continuous-time heat-bath dynamics without external field, run until `t_end`.
pub fn run_glauber(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    initial: &SpinConfig,
    t_end: f64,
    rng: &RngStream,
) -> Result<SpinConfig> {
    if initial.len() != topo.len() {
        return Err(Error::input("initial configuration does not match topology"));
    }
    if !(t_end >= 0.0) {
        return Err(Error::parameter("t_end", "must be >= 0"));
    }
    let mut clocks = PoissonClocks::new(topo, &rng.derive(purpose::GLAUBER));
    let mut spins = initial.0.clone();
    while let Some((_, v, u)) = clocks.next_before(t_end) {
        spins[v] = if u < heat_bath_plus(topo, couplings, &spins, v) { 1 } else { -1 };
    }
    Ok(SpinConfig(spins))
}

/// Outcome of two coupled heat-bath chains started one spin apart.
#[derive(Clone, Debug, Serialize)]
pub struct DisagreementRun {
    /// `(time, size)` after every update, starting with `(0, 1)`.
    pub sizes: Vec<(f64, usize)>,
    /// Updates at an agreeing vertex with exactly one disagreeing neighbor.
    pub trials: u64,
    /// Trials after which the vertex disagreed.
    pub transmissions: u64,
    /// Sum over trials of the exact disagreement probability of the coupled update.
    pub exact_probability_sum: f64,
    /// Largest exact disagreement probability over the trials.
    pub max_transmission_probability: f64,
    /// Time of the first update of the center, if any.
    pub first_center_update: Option<f64>,
    /// The set was empty at every event from the first center update on.
    pub empty_after_first_center_update: bool,
}

impl DisagreementRun {
    /// Disagreement-set size at time `t`.
    pub fn size_at(&self, t: f64) -> usize {
        let idx = self.sizes.partition_point(|&(s, _)| s <= t);
        self.sizes[idx.saturating_sub(1)].1
    }
}

/// Two chains differing only at the center, sharing clocks and update uniforms.
pub fn glauber_disagreement(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    t_end: f64,
    rng: &RngStream,
) -> Result<DisagreementRun> {
    let start = sample_conditional(topo, couplings, &vec![0.0; topo.len()], rng)?;
    glauber_disagreement_from(topo, couplings, &start, t_end, rng)
}

/// As [`glauber_disagreement`], from a given first configuration; the second
/// one is `initial` with the center flipped.
pub fn glauber_disagreement_from(
    topo: &TreeTopology,
    couplings: &CouplingAssignment,
    initial: &SpinConfig,
    t_end: f64,
    rng: &RngStream,
) -> Result<DisagreementRun> {
    let n = topo.len();
    if initial.len() != n {
        return Err(Error::input("initial configuration does not match topology"));
    }
    let start = initial.clone();
    let mut a = start.0.clone();
    let mut b = start.0;
    b[0] = -b[0];
    let mut disagree = vec![false; n];
    disagree[0] = true;
    let mut size = 1usize;
    let mut run = DisagreementRun {
        sizes: vec![(0.0, 1)],
        trials: 0,
        transmissions: 0,
        exact_probability_sum: 0.0,
        max_transmission_probability: 0.0,
        first_center_update: None,
        empty_after_first_center_update: false,
    };
    let mut clocks = PoissonClocks::new(topo, &rng.derive(purpose::GLAUBER));
    while let Some((time, v, u)) = clocks.next_before(t_end) {
        let pa = heat_bath_plus(topo, couplings, &a, v);
        let pb = heat_bath_plus(topo, couplings, &b, v);
        let fresh = !disagree[v] && topo.neighbors(v).filter(|&w| disagree[w]).count() == 1;
        a[v] = if u < pa { 1 } else { -1 };
        b[v] = if u < pb { 1 } else { -1 };
        let now = a[v] != b[v];
        if fresh {
            run.trials += 1;
            run.transmissions += u64::from(now);
            run.exact_probability_sum += (pa - pb).abs();
            run.max_transmission_probability = run.max_transmission_probability.max((pa - pb).abs());
        }
        if now != disagree[v] {
            disagree[v] = now;
            if now {
                size += 1;
            } else {
                size -= 1;
            }
        }
        run.sizes.push((time, size));
        if v == 0 && run.first_center_update.is_none() {
            run.first_center_update = Some(time);
            run.empty_after_first_center_update = true;
        }
        if run.first_center_update.is_some() && size != 0 {
            run.empty_after_first_center_update = false;
        }
    }
    Ok(run)
}

/// Transition matrix of one heat-bath step at a uniformly chosen vertex, with
/// external field, over all `2^n` configurations (bit encoding of [`SpinConfig::to_bits`]).
pub fn heat_bath_kernel(topo: &TreeTopology, couplings: &CouplingAssignment, fields: &[f64]) -> Result<SquareMatrix> {
    let n = topo.len();
    if n > 12 {
        return Err(Error::input("kernel enumeration is limited to 12 vertices"));
    }
    let states = 1usize << n;
    let mut k = SquareMatrix::zeros(states);
    for s in 0..states {
        let cfg = SpinConfig::from_bits(s as u64, n);
        for v in 0..n {
            let p_plus = 0.5 * (1.0 + (local_field(topo, couplings, cfg.spins(), v) + fields[v]).tanh());
            let plus = s | (1 << v);
            let minus = s & !(1 << v);
            k.set(s, plus, k.get(s, plus) + p_plus / n as f64);
            k.set(s, minus, k.get(s, minus) + (1.0 - p_plus) / n as f64);
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::beta_from_tanh;
    use crate::topology::build_tree;

    #[test]
    fn saturated_field_gives_all_plus() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.3).unwrap();
        for r in 0..1000 {
            let s = sample_conditional(&t, &c, &vec![50.0; t.len()], &RngStream::new(r)).unwrap();
            assert!(s.spins().iter().all(|&x| x == 1));
        }
    }

    #[test]
    fn glauber_zero_time_is_identity() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.3).unwrap();
        let init = sample_broadcast(&t, 0.3f64.tanh(), &RngStream::new(5)).unwrap();
        assert_eq!(run_glauber(&t, &c, &init, 0.0, &RngStream::new(9)).unwrap(), init);
    }

    #[test]
    fn detailed_balance_small_trees() {
        // The three-vertex line; a zero coupling on one edge leaves a two-vertex tree
        // plus an isolated spin.
        let topo = build_tree(2, 1).unwrap();
        for betas in [[0.7, 0.0], [0.7, 0.2]] {
            let c = CouplingAssignment::from_edges(&topo, &betas).unwrap();
            let x = [0.3, -0.5, 0.1];
            let k = heat_bath_kernel(&topo, &c, &x).unwrap();
            let n = topo.len();
            let weight = |s: usize| {
                let cfg = SpinConfig::from_bits(s as u64, n);
                let sp = cfg.spins();
                let mut e: f64 =
                    topo.edges().map(|ed| c.beta(ed.child) * f64::from(sp[ed.parent] * sp[ed.child])).sum();
                e += (0..n).map(|v| x[v] * f64::from(sp[v])).sum::<f64>();
                e.exp()
            };
            for s in 0..(1 << n) {
                let row: f64 = (0..(1 << n)).map(|q| k.get(s, q)).sum();
                assert!((row - 1.0).abs() < 1e-12);
                for q in 0..(1 << n) {
                    let lhs = weight(s) * k.get(s, q);
                    let rhs = weight(q) * k.get(q, s);
                    assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0), "s={s} q={q}");
                }
            }
        }
    }

    #[test]
    fn beta_zero_disagreement_dies_at_first_center_update() {
        let t = build_tree(3, 2).unwrap();
        let c = CouplingAssignment::uniform(&t, 0.0).unwrap();
        for r in 0..200 {
            let run = glauber_disagreement(&t, &c, 30.0, &RngStream::new(r)).unwrap();
            assert_eq!(run.transmissions, 0);
            assert!(run.empty_after_first_center_update, "replica {r}");
            let tc = run.first_center_update.unwrap();
            assert_eq!(run.size_at(tc * 0.999), 1);
            assert_eq!(run.size_at(tc), 0);
        }
    }

    #[test]
    fn strong_coupling_disagreement_grows_from_disordered_start() {
        // From an equilibrium start at this coupling almost every neighborhood is
        // aligned and transmission is rare; the worst-case regime needs disorder.
        let t = build_tree(4, 4).unwrap();
        let c = CouplingAssignment::uniform(&t, beta_from_tanh(0.9).unwrap()).unwrap();
        let free = CouplingAssignment::uniform(&t, 0.0).unwrap();
        let (mut s1, mut s5) = (0.0, 0.0);
        let reps = 400;
        for r in 0..reps {
            let rng = RngStream::new(1000 + r);
            let init = sample_conditional(&t, &free, &vec![0.0; t.len()], &rng.derive(purpose::CONDITIONAL)).unwrap();
            let run = glauber_disagreement_from(&t, &c, &init, 5.0, &rng).unwrap();
            s1 += run.size_at(1.0) as f64;
            s5 += run.size_at(5.0) as f64;
        }
        assert!(s5 > s1, "mean size at t=5 ({}) should exceed t=1 ({})", s5 / reps as f64, s1 / reps as f64);
    }

    #[test]
    fn bits_roundtrip() {
        let c = SpinConfig(vec![1, -1, -1, 1]);
        assert_eq!(SpinConfig::from_bits(c.to_bits(), 4), c);
    }
}
