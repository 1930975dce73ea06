//! Seeded randomness. One ChaCha8 stream per concern (init, shuffling,
//! synthetic data) so adding draws in one place never shifts another.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmath;

pub type SeededRng = ChaCha8Rng;

/// Domain-separated stream: mixes a purpose tag into the seed.
pub fn stream(seed: u64, tag: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub const TAG_INIT: u64 = 1;
pub const TAG_SHUFFLE: u64 = 2;
pub const TAG_SYNTH: u64 = 3;

/// Uniform in [-limit, limit).
pub fn uniform_symmetric(rng: &mut SeededRng, limit: f64) -> f64 {
    rng.random_range(-limit..limit)
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut SeededRng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::sin(core::f64::consts::TAU * u2)
}

/// Poisson draw by Knuth's product-of-uniforms method; exact for the small
/// rates used by the synthetic generator.
pub fn poisson(rng: &mut SeededRng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let l = fmath::exp(-lambda);
    let mut k = 0u64;
    let mut p = 1.0f64;
    loop {
        p *= rng.random_range(0.0f64..1.0);
        if p <= l {
            return k;
        }
        k += 1;
    }
}

/// Fisher-Yates shuffle with a fixed draw order.
pub fn shuffle<T>(rng: &mut SeededRng, items: &mut Vec<T>) {
    if items.len() < 2 {
        return;
    }
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
