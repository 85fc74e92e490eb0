//! Seeded random number generation.
//!
//! The generator is xoshiro256** (four 64-bit words of state, 64-bit
//! output). Seeds are expanded into the state with SplitMix64, exactly as
//! `rand_xoshiro::Xoshiro256StarStar::seed_from_u64` does. Uniform doubles
//! take the top 53 bits of one output word; normal deviates use the
//! Box-Muller transform on two uniforms (the second deviate is discarded so
//! every call consumes exactly two words). Nothing here depends on the
//! platform, so a seed yields the same stream everywhere.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Deterministic generator used for initialization, dropout masks,
/// shuffling and simulation.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Independent stream for a numbered sub-task, a pure function of
    /// `(seed, task)`.
    pub fn for_task(seed: u64, task: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(task.wrapping_add(0x5241_4b49))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal deviate.
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n) by widening multiply.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
