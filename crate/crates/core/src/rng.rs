//! Seeded random streams (xoshiro256++ seeded through splitmix64).
//!
//! Every random decision in the pipeline pulls from a stream derived from
//! `(seed, purpose, epoch, index, ...)` rather than from one shared
//! generator. Two consequences the rest of the crate leans on:
//!
//! * augmenting image 17 in epoch 3 produces the same bytes whether it is
//!   processed first, last, or on another worker;
//! * disabling one component (say SPM) cannot shift the draws consumed by an
//!   unrelated one, because they never share a stream.

use alloc::vec::Vec;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic PRNG; identical seeds yield identical draw sequences on
/// every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut st = seed;
        Rng {
            s: [
                splitmix64(&mut st),
                splitmix64(&mut st),
                splitmix64(&mut st),
                splitmix64(&mut st),
            ],
        }
    }

    /// Derive an independent stream from a seed and a path of integers
    /// (purpose tag, epoch, image index, ...). Order matters; `derive(s,
    /// &[a, b])` and `derive(s, &[b, a])` are unrelated streams.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut st = seed;
        let mut acc = splitmix64(&mut st);
        for &p in path {
            st = acc ^ p;
            acc = splitmix64(&mut st);
        }
        Rng::new(acc)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = (self.s[0].wrapping_add(self.s[3]))
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`; safe to pass to `ln`.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via 128-bit widening multiply.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Bernoulli draw; always consumes exactly one `u64`.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Child stream seeded by the next draw; consumes exactly one `u64`.
    /// Successive splits are mutually independent streams.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Standard normal via Box–Muller; consumes exactly two `u64`s.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.next_f64();
        let r = crate::real::sqrt64(-2.0 * crate::real::ln64(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        r * cos64(theta)
    }
}

#[inline(always)]
fn cos64(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.cos()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::cos(x)
    }
}
