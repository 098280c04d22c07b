//! Deterministic seeding tree.
//!
//! Every stochastic component draws from a ChaCha12 stream whose seed is
//! derived from a master seed plus a path of tags, e.g.
//! `master -> (USER, u)` for profile sampling and
//! `master -> (DAY, u, day)` for per-day request generation. Re-deriving the
//! same path always yields the same stream, so traces and experiments are
//! reproducible independent of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Tag namespaces for the seeding tree. Fixed values are part of the
/// reproducibility contract: changing them changes every derived stream.
pub mod tag {
    pub const CATALOG: u64 = 0x01;
    pub const USER_PROFILE: u64 = 0x02;
    pub const USER_DAY: u64 = 0x03;
    pub const GENIE: u64 = 0x04;
    pub const TRAIN_ROUND: u64 = 0x05;
    pub const RANDOM_PLAN: u64 = 0x06;
    pub const INIT: u64 = 0x07;
    pub const TRACE: u64 = 0x08;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tag path into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p));
    }
    state
}

/// ChaCha12 stream for the given tag path under `master`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_stable_and_path_sensitive() {
        let a = derive_seed(7, &[tag::USER_DAY, 3, 11]);
        let b = derive_seed(7, &[tag::USER_DAY, 3, 11]);
        let c = derive_seed(7, &[tag::USER_DAY, 11, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn streams_are_reproducible() {
        let mut r1 = stream(42, &[tag::GENIE, 0, 100]);
        let mut r2 = stream(42, &[tag::GENIE, 0, 100]);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
