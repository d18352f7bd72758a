//! SplitMix64 streams used for every seeded decision in the engine.
//!
//! The construction is normative so that other implementations reproduce
//! splits and mode sequences bit-exactly:
//!
//! * state is seeded with `run_seed ^ purpose_tag`;
//! * each draw adds `0x9E3779B97F4A7C15` to the state and returns the
//!   standard SplitMix64 finalizer of the new state;
//! * a uniform index in `[0, bound)` is `(draw as u128 * bound as u128) >> 64`;
//! * a uniform float in `[0, 1)` is `(draw >> 11) * 2^-53`;
//! * shuffles are Fisher–Yates from the last index down to 1.

use rand_core::{impls, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-purpose tags XORed into the run seed.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4C49_5400_0001;
    pub const KFOLD: u64 = 0x4B46_4F4C_4400_0002;
    pub const PROMPT_MODE: u64 = 0x4D4F_4445_0000_0003;
    pub const WORLD: u64 = 0x574F_524C_4400_0004;
    pub const MOCK_LLM: u64 = 0x4D4C_4C4D_0000_0005;
    pub const MOCK_MLLM: u64 = 0x4D4D_4C4C_4D00_0006;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for one purpose of a run: state = `seed ^ tag`.
    pub fn for_purpose(seed: u64, tag: u64) -> Self {
        Self::new(seed ^ tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, bound)` by multiply-shift. `bound` must be > 0.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer; also used to derive independent sub-stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed; order-sensitive.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0u64, |acc, &w| mix64(acc.wrapping_add(GOLDEN_GAMMA) ^ w))
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
