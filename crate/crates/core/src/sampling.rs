//! Seeded random draws used by the sampling audits.
//!
//! Every audit takes an explicit seed; parallel work items get their own
//! ChaCha stream so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// A nonnegative vector. Half of the draws are dense, the rest are
/// supported on a random subset of cells (down to a single cell) so that
/// the faces and extreme rays of the cone are visited.
pub fn cone_values<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if rng.random_bool(0.5) {
        return (0..n).map(|_| rng.random::<f64>()).collect();
    }
    let support = rng.random_range(1..=n);
    let mut v = vec![0.0; n];
    for _ in 0..support {
        let j = rng.random_range(0..n);
        v[j] = rng.random::<f64>() + f64::EPSILON;
    }
    v
}

/// Entries uniform in `[-1, 1)`.
pub fn signed_values<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}
