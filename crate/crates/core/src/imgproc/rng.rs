//! Seeded, counter-based random streams.
//!
//! Every stochastic operation in the crate takes an explicit [`RngStream`].
//! A stream is identified by `(seed, substream)`: the seed keys a ChaCha8
//! generator and the substream selects one of its 2^64 independent stream
//! positions, so two distinct substreams never share draws no matter how
//! many values each consumes. Work that is split across images (one
//! substream per image) therefore produces the same bytes regardless of the
//! order or thread it runs on.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    substream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, substream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(substream);
        Self {
            seed,
            substream,
            inner,
        }
    }

    /// A stream keyed by `seed` mixed with a purpose tag, so independent
    /// consumers of the same user seed (sampler, augmentation, init) do not
    /// overlap.
    pub fn derived(seed: u64, tag: u64, substream: u64) -> Self {
        Self::new(mix_seed(seed, tag), substream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self) -> u64 {
        self.substream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi]` (returns `lo` when the range is degenerate).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Gamma(shape, 1) draw.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.inner)
    }

    /// Beta(a, b) draw via two gamma variates; always in `[0, 1]`.
    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        let x = self.gamma(a);
        let y = self.gamma(b);
        if x + y == 0.0 {
            return 0.5;
        }
        (x / (x + y)).clamp(0.0, 1.0)
    }

    /// Symmetric Dirichlet(alpha, ..., alpha) draw over `k` components.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..k).map(|_| self.gamma(alpha)).collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            return vec![1.0 / k as f64; k];
        }
        for v in &mut w {
            *v /= total;
        }
        w
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer over `seed ^ tag`.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
