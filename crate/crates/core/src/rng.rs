//! Counter-based random streams.
//!
//! A stream is a 64-bit key plus a counter; every draw is a pure function of
//! `(key, counter)`. Keys are derived hierarchically (seed, purpose, replica,
//! vertex label, ...), so adding vertices, steps or replicas never changes the
//! draws of any other stream.

use crate::topology::VertexLabel;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit key of a vertex address.
pub fn label_key(label: &VertexLabel) -> u64 {
    let mut h = mix64(0x6C61_6265_6C00 ^ label.depth() as u64);
    for &c in label.path() {
        h = mix64(h ^ u64::from(c).wrapping_add(1));
    }
    h
}

/// Purpose tags keeping unrelated consumers of one seed apart.
pub mod purpose {
    pub const SDE_NOISE: u64 = 1;
    pub const BROADCAST: u64 = 2;
    pub const CONDITIONAL: u64 = 3;
    pub const GLAUBER: u64 = 4;
    pub const REFERENCE_SPINS: u64 = 5;
    pub const REFERENCE_BROWNIAN: u64 = 6;
    pub const INSTANCES: u64 = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

const UNIT: f64 = 1.0 / (1u64 << 53) as f64;

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { key: mix64(seed ^ 0x005E_ED0F_1516), counter: 0 }
    }

    /// Independent child stream for one component of a hierarchical key.
    pub fn derive(&self, part: u64) -> Self {
        RngStream { key: mix64(self.key ^ mix64(part ^ 0xD1B5_4A32_D192_ED03)), counter: 0 }
    }

    pub fn for_label(&self, label: &VertexLabel) -> Self {
        self.derive(label_key(label))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(self.key ^ mix64(counter))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        ((self.u64_at(counter) >> 11) as f64 + 0.5) * UNIT
    }

    /// Standard normal from draws `2c` and `2c + 1` (Box-Muller, cosine branch).
    #[inline]
    pub fn normal_at(&self, counter: u64) -> f64 {
        let u1 = self.uniform_at(2 * counter);
        let u2 = self.uniform_at(2 * counter + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.u64_at(self.counter);
        self.counter += 1;
        x
    }

    pub fn next_uniform(&mut self) -> f64 {
        let x = self.uniform_at(self.counter);
        self.counter += 1;
        x
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_exponential(&mut self, rate: f64) -> f64 {
        -self.next_uniform().ln() / rate
    }

    /// `+1` with probability `p_plus`, else `-1`.
    pub fn next_spin(&mut self, p_plus: f64) -> i8 {
        if self.next_uniform() < p_plus {
            1
        } else {
            -1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_key_separated() {
        let a = RngStream::new(7).derive(purpose::SDE_NOISE).derive(3);
        let b = RngStream::new(7).derive(purpose::SDE_NOISE).derive(3);
        assert_eq!(a.u64_at(11), b.u64_at(11));
        assert_ne!(a.u64_at(11), RngStream::new(7).derive(purpose::SDE_NOISE).derive(4).u64_at(11));
        assert_ne!(label_key(&"0/1".parse().unwrap()), label_key(&"1/0".parse().unwrap()));
        assert_ne!(label_key(&VertexLabel::root()), label_key(&"0".parse().unwrap()));
    }

    #[test]
    fn normal_moments() {
        let s = RngStream::new(42);
        let n = 200_000u64;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for c in 0..n {
            let z = s.normal_at(c);
            m1 += z;
            m2 += z * z;
            m4 += z * z * z * z;
        }
        let nf = n as f64;
        assert!((m1 / nf).abs() < 4.0 / nf.sqrt());
        assert!((m2 / nf - 1.0).abs() < 4.0 * 2f64.sqrt() / nf.sqrt());
        assert!((m4 / nf - 3.0).abs() < 4.0 * 96f64.sqrt() / nf.sqrt());
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut s = RngStream::new(1);
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
