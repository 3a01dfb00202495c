//! Deterministic random number generation.
//!
//! All randomness in the crate flows through [`Rng`], a SplitMix64 generator.
//! Independent streams are derived by hashing a seed together with a list of
//! stream keys ([`Rng::derive`]), so sampling chains, batch elements, and
//! per-dimension draws each get their own counter-based stream. This makes
//! every run reproducible from its seed alone, independent of thread count
//! or iteration order.

/// SplitMix64 generator. Small state, passes BigCrush, and cheap to fork.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: mix(seed.wrapping_add(GOLDEN)),
        }
    }

    /// Derive an independent stream keyed by `(seed, keys...)`.
    ///
    /// Streams with distinct key lists are statistically independent; the
    /// derivation is pure, so the same keys always yield the same stream.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut h = mix(seed ^ 0x243f_6a88_85a3_08d3);
        for &k in keys {
            h = mix(h.wrapping_add(GOLDEN) ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        Rng::new(h)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift rejection-free mapping; bias is < 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draw from a categorical distribution given probabilities.
    ///
    /// Probabilities need not be exactly normalized; the draw uses the
    /// running sum and falls back to the last index on rounding shortfall.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        debug_assert!(!probs.is_empty());
        let total: f64 = probs.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &p) in probs.iter().enumerate() {
            u -= p;
            if u < 0.0 {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
