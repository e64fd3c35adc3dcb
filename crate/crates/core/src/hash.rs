//! Portable 64-bit hashing and a tiny seeded generator.
//!
//! Everything that must agree bit-for-bit across implementations (label keys,
//! split shuffles, default scenario ids) goes through these functions rather
//! than through `rand`, whose stream layout is allowed to change between
//! releases.
//!
//! `mix` is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! `hash64(seed, bytes)` starts from `state = seed`, absorbs each byte `b` as
//! `state = mix(state + GOLDEN ^ b)` (wrapping add, then xor), and finishes with
//! `mix(state + GOLDEN ^ len)` where `len` is the byte length.

/// Weyl increment used by SplitMix64.
pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    let mut state = seed;
    for &b in bytes {
        state = mix(state.wrapping_add(GOLDEN) ^ u64::from(b));
    }
    mix(state.wrapping_add(GOLDEN) ^ bytes.len() as u64)
}

/// SplitMix64 stream generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform integer in `0..bound` by multiply-shift (Lemire, without rejection).
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Uniform float in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// In-place Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
