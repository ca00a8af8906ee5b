use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

/// Fills `out` with i.i.d. N(0, 2 / fan_in) draws.
pub fn he_normal_fill<T: Real, R: Rng + ?Sized>(fan_in: usize, out: &mut [T], rng: &mut R) {
    assert!(fan_in >= 1, "fan_in must be positive");
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    for v in out {
        *v = T::lit(dist.sample(rng));
    }
}

/// He-normal weights from a ChaCha8 stream seeded with `seed`.
pub fn he_normal_init(fan_in: usize, len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; len];
    he_normal_fill(fan_in, &mut w, &mut rng);
    w
}
