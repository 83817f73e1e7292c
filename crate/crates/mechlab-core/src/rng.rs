//! Deterministic random streams.
//!
//! Every random draw in the crate flows from a single user seed through a
//! documented split scheme: `seed -> domain label -> cell index`. Streams are
//! independent of thread scheduling and identical across numeric backends,
//! since all draws happen on the integer level and are converted to scalars
//! afterwards.

use crate::num::Scalar;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 generator with labelled forking.
///
/// A stream's identity is fixed at creation; forking reads only that
/// identity, never the draw position, so forks taken before and after draws
/// coincide and call sites may fork in any order.
#[derive(Debug, Clone)]
pub struct Rng {
    root: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            root: seed,
            state: seed,
        }
    }

    /// Derives the independent stream for `(label, index)`.
    pub fn fork(&self, label: &str, index: u64) -> Rng {
        let mut h = self.root ^ 0x51_7c_c1_b7_27_22_0a_95;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        h = (h ^ index).wrapping_mul(0x100_0000_01b3);
        // Burn one round so closely related labels decorrelate.
        let mut state = h;
        splitmix64(&mut state);
        Rng { root: state, state }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform integer in `[0, bound)`.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // Reject to avoid modulo bias; deterministic given the stream.
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    pub fn next_usize(&mut self, bound: usize) -> usize {
        self.next_below(bound as u64) as usize
    }

    /// Uniform f64 in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform dyadic rational `k / 2^20` in `[0, 1]`, exactly representable
    /// in both numeric backends.
    pub fn next_unit<S: Scalar>(&mut self) -> S {
        const DEN: u64 = 1 << 20;
        let k = self.next_below(DEN + 1);
        S::ratio(k as i64, DEN)
    }

    /// Uniform dyadic rational in `(0, 1]` (never zero).
    pub fn next_unit_positive<S: Scalar>(&mut self) -> S {
        const DEN: u64 = 1 << 20;
        let k = 1 + self.next_below(DEN);
        S::ratio(k as i64, DEN)
    }

    /// Random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_usize(i + 1);
            p.swap(i, j);
        }
        p
    }
}
