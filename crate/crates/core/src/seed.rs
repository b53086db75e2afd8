//! Scheduling-independent seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `id` under `master`; depends on nothing else.
pub fn child_seed(master: u64, id: u64) -> u64 {
    splitmix64(master ^ splitmix64(id.wrapping_add(0x5EED)))
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ_and_repeat() {
        assert_eq!(child_seed(7, 3), child_seed(7, 3));
        assert_ne!(child_seed(7, 3), child_seed(7, 4));
        assert_ne!(child_seed(7, 3), child_seed(8, 3));
    }
}
