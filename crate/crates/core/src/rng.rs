//! Seeded, portable randomness.
//!
//! Every stochastic decision in the crate (init, shuffling, mode draws,
//! dropout, augmentation, pairing) pulls from a [`SeededRng`] derived from the
//! experiment seed and a named stream id, so runs replay bit-identically and
//! subsystems cannot perturb each other's draws.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids. One per independent consumer of randomness.
pub mod streams {
    pub const MODEL_F: u64 = 1;
    pub const MODEL_GM: u64 = 2;
    pub const MODEL_GP: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const MODES: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const AUGMENT: u64 = 7;
    pub const EVAL_PAIRING: u64 = 8;
    pub const DEFENSE: u64 = 9;
    pub const POISON: u64 = 10;
    pub const SUBSET: u64 = 11;
    pub const SYNTH_DATA: u64 = 100;
}

/// Derive an independent seed from a base seed and a salt (splitmix64 step).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8-backed RNG with the handful of draws the crate needs.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f32>,
}

impl SeededRng {
    /// RNG for `(seed, stream)`. Different streams from the same seed are
    /// independent ChaCha streams.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            inner,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 24-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f32 {
        (self.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Rejection sampling, exact.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f32) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f32 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u in (0,1] so the log is finite.
        let u = (self.next_u32() >> 8) as f32 + 1.0;
        let u = u * (1.0 / 16_777_217.0);
        let v = self.uniform();
        let r = crate::math::sqrt(-2.0 * crate::math::ln(u));
        let (s, c) = crate::math::sin_cos(core::f32::consts::TAU * v);
        self.spare_normal = Some(r * s);
        r * c
    }

    /// Fisher-Yates permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }

    /// Shuffle a slice in place (Fisher-Yates).
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
