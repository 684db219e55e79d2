//! Counter-based noise streams.
//!
//! Every random draw in training is addressed by `(seed, purpose, iteration, index)`,
//! so a ray's noise does not depend on which worker evaluates it or on how many
//! rays were drawn before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Batch = 2,
    Jitter = 3,
    Gumbel = 4,
    Perturb = 5,
    Eval = 6,
    Gradcheck = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub iteration: u64,
    pub index: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, purpose: Purpose, iteration: u64, index: u64) -> Self {
        Self {
            seed,
            purpose,
            iteration,
            index,
        }
    }

    pub fn with_index(self, index: u64) -> Self {
        Self { index, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed ^ 0x6a09_e667_f3bc_c908);
        h = splitmix64(h ^ self.purpose as u64);
        h = splitmix64(h ^ self.iteration);
        h = splitmix64(h ^ self.index);
        ChaCha8Rng::seed_from_u64(h)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
