//! Seeded random streams.
//!
//! Everything random in the crate draws from [`ChaCha8Rng`], whose output is
//! stable across platforms and releases. Independent streams for shards or
//! evaluation items are derived with [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `stream` into `seed` (splitmix64 finaliser) to get an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two independent standard normal draws (Box–Muller).
pub fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // 1 - U lies in (0, 1], keeping ln finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Fills `out` with i.i.d. `N(mean, std²)` draws, consuming draws in pairs.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], mean: f64, std: f64) {
    for chunk in out.chunks_mut(2) {
        let (a, b) = normal_pair(rng);
        chunk[0] = mean + std * a;
        if let Some(second) = chunk.get_mut(1) {
            *second = mean + std * b;
        }
    }
}
