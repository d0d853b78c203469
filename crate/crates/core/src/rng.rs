//! Random number plumbing shared by the simulators and the harness.
//!
//! All stochastic code draws from [`SimRng`], a ChaCha8 stream cipher
//! (counter based, platform independent). Replicate `k` of an ensemble with
//! base seed `s` is seeded with [`derive_seed`]`(s, k)`:
//!
//! ```text
//! derive_seed(s, k) = splitmix64(s ^ splitmix64(k + 0x9E37_79B9_7F4A_7C15))
//! ```
//!
//! and the 64-bit seed is expanded to the 256-bit ChaCha key by
//! `SeedableRng::seed_from_u64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `index` of an ensemble started from `base_seed`.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub(crate) fn uniform_pos<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = rng.random::<f64>();
        if u > 0.0 {
            return u;
        }
    }
}

/// Exponential variate with the given rate, by inversion.
#[inline]
pub(crate) fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -uniform_pos(rng).ln() / rate
}

/// Number of Bernoulli(p) trials up to and including the first success.
#[inline]
pub(crate) fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let u = uniform_pos(rng);
    let k = (u.ln() / (-p).ln_1p()).ceil();
    if k < 1.0 {
        1
    } else if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}
