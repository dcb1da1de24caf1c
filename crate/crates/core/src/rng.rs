//! Seeded random stream with a draw counter.
//!
//! Every source of randomness in a run (weight init, reparameterization
//! noise, shuffles, data generation) is an `RngStream`, so a (seed, counter)
//! pair pins the exact state and two runs with the same seed are
//! bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Counter-tracked deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of primitive draws issued so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derive an independent substream. Distinct tags on the same parent
    /// give streams that are independent for all tests we perform.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    /// Uniform draw in [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        self.counter += 1;
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }

    /// Uniform integer in [0, n).
    pub fn pick(&mut self, n: usize) -> usize {
        assert!(n > 0, "pick from empty range");
        self.counter += 1;
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates shuffled index permutation of 0..n.
    pub fn shuffled_indices(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.pick(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
