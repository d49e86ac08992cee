//! Deterministic counter-based randomness.
//!
//! Every random decision in the engine draws from a [`SimRng`] seeded by
//! hashing a master seed together with a stream tag and the coordinates of
//! the decision (time step, user, item, trial, ...). Two consequences:
//!
//! * runs are bit-reproducible from a single `u64` seed, independent of
//!   evaluation order and thread count;
//! * the rating realized for a (user, item) pair does not depend on which
//!   policy is running or when the pair is consumed, so different policies
//!   can be compared under common random numbers.
//!
//! The generator is SplitMix64: fast, stable across platforms, and not
//! suitable for anything security related.

/// Stream tags used to derive independent sub-seeds from one master seed.
pub mod stream {
    pub const SESSION: u64 = 0x01;
    pub const RATING: u64 = 0x02;
    pub const POLICY: u64 = 0x03;
    pub const ACTION: u64 = 0x04;
    pub const EXPLORE: u64 = 0x05;
    pub const TIE_BREAK: u64 = 0x06;
    pub const POPULATION: u64 = 0x07;
    pub const TRIAL: u64 = 0x08;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// Derive a sub-seed from a master seed and a list of tags
/// (stream id, time step, user index, ...). Order-sensitive.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = mix64(master ^ GOLDEN_GAMMA);
    for &tag in tags {
        h = mix64(h ^ mix64(tag.wrapping_add(GOLDEN_GAMMA)));
    }
    h
}

/// SplitMix64 generator with a 64-bit state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Generator for a derived stream, shorthand for `new(derive_seed(..))`.
    pub fn for_stream(master: u64, tags: &[u64]) -> Self {
        Self::new(derive_seed(master, tags))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, n)`. Panics if `n == 0`.
    #[inline]
    pub fn gen_range(&mut self, n: usize) -> usize {
        assert!(n > 0, "gen_range: empty range");
        // Lemire's multiply-shift; bias is negligible for the ranges used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Bernoulli draw: true with probability `p`. Exact at p = 0 and p = 1.
    #[inline]
    pub fn gen_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.gen_range(i + 1);
            xs.swap(i, j);
        }
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<u32> {
        let mut p: Vec<u32> = (0..n as u32).collect();
        self.shuffle(&mut p);
        p
    }
}
