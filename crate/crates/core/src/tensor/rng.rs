//! Seeded random streams.
//!
//! [`Rng`] wraps a ChaCha8 block-counter generator, so the value stream is a
//! pure function of the seed. Independent streams for parallel work are
//! derived with [`child_seed`] (the parent seed mixed with an index) instead
//! of sharing one generator across threads.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `seed`.
///
/// The index is hashed before being combined with the parent seed, so
/// nested derivations (`child_seed(child_seed(s, a), b)`) do not collide the
/// way a bare `s ^ a ^ b` would.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for stream `index`; does not advance `self`.
    pub fn child(&self, index: u64) -> Self {
        Self::new(child_seed(self.seed, index))
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.random_range(0..n)
    }

    /// Uniform float in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws `normal(0, std)` values, redrawing any that fall outside
/// `[-2·std, 2·std]`.
pub fn trunc_normal_init(rng: &mut Rng, shape: &[usize], std: f32) -> Tensor {
    assert!(std > 0.0, "std must be positive");
    let bound = 2.0 * std as f64;
    Tensor::from_fn(shape, |_| loop {
        let v = rng.standard_normal() * std as f64;
        if v.abs() <= bound {
            // the bound check happens in f64; re-clamp after narrowing
            break (v as f32).clamp(-2.0 * std, 2.0 * std);
        }
    })
}
