//! Deterministic random streams.
//!
//! Every consumer of randomness asks for a child stream identified by
//! `(seed, label, index)`. The label and seed are folded into a 64-bit key
//! with FNV-1a followed by a SplitMix64 finalizer; the key seeds a ChaCha8
//! generator and `index` selects the ChaCha stream. ChaCha is counter based,
//! so streams are independent of the order in which tasks run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_key(seed: u64, label: &str) -> u64 {
    let h = label.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME));
    splitmix64(seed ^ h)
}

/// Derives a child seed from a parent seed, a label and an index.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(label_key(seed, label).wrapping_add(index))
}

/// Random stream for `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(label_key(seed, label));
    rng.set_stream(index);
    rng
}

/// Draws `n` row indices uniformly with replacement from `0..n`.
pub fn resample_indices(seed: u64, n: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, "noise", 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(stream(7, "noise", 0).next_u64(), stream(7, "noise", 1).next_u64());
        assert_ne!(stream(7, "noise", 0).next_u64(), stream(7, "draw", 0).next_u64());
        assert_ne!(stream(7, "noise", 0).next_u64(), stream(8, "noise", 0).next_u64());
        assert_ne!(child_seed(1, "a", 0), child_seed(1, "a", 1));
    }

    #[test]
    fn resample_stays_in_range() {
        let idx = resample_indices(3, 50);
        assert_eq!(idx.len(), 50);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
