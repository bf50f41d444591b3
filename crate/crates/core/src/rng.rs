//! Reproducible random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha20 keystream
//! (`rand_chacha::ChaCha20Rng`) seeded through `SeedableRng::seed_from_u64`.
//! Uniforms take the top 53 bits of a `next_u64` word; Gaussians are produced
//! by the polar-free Box-Muller transform on consecutive uniform pairs, using
//! both outputs. Child seeds come from [`derive_seed`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Identifier recorded alongside every disorder sample and in run manifests.
pub const RNG_ID: &str = "chacha20:seed_from_u64/u53-uniform/box-muller-v1";

/// Identifier of the seed mixing function used by [`derive_seed`].
pub const SEED_DERIVATION_ID: &str = "splitmix64(master + (index+1)*0x9e3779b97f4a7c15)";

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub type Stream = ChaCha20Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 output finalizer; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `master`.
///
/// For a fixed master the map `index -> seed` is injective over all of `u64`:
/// the Weyl step is a bijection because the increment is odd, and the
/// finalizer is a bijection.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform on `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `(0, 1]`, for logarithms.
#[inline]
pub fn uniform_open_zero<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variates from a uniform stream, two per Box-Muller step.
pub struct BoxMuller<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> BoxMuller<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = uniform_open_zero(&mut self.rng);
        let u2 = uniform(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
