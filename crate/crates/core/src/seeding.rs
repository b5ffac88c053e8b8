//! Deterministic seed derivation for independent random streams.

use rand::SeedableRng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with a path of stream indices into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k.wrapping_add(0x51))))
}

pub fn stream_rng<R: SeedableRng>(seed: u64, path: &[u64]) -> R {
    R::seed_from_u64(derive_seed(seed, path))
}
