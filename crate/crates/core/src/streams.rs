//! Deterministic per-worker random streams.
//!
//! Stream `i` of a run with master seed `s` is a ChaCha8 generator seeded
//! with `s ^ (i * 0x9E37_79B9_7F4A_7C15)` (wrapping). Work is always split
//! into contiguous chunks by worker index and concatenated in that order, so
//! output is a pure function of `(seed, worker count)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default master seed for randomized commands.
pub const DEFAULT_SEED: u64 = 0xC0FFEE;

const MIX: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn stream_seed(master: u64, index: u64) -> u64 {
    master ^ index.wrapping_mul(MIX)
}

pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, index))
}

/// Half-open index ranges of `n` items split over `workers` chunks.
pub fn chunk_bounds(n: usize, workers: usize) -> Vec<(usize, usize)> {
    let workers = workers.max(1);
    (0..workers)
        .map(|w| (w * n / workers, (w + 1) * n / workers))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn stream_zero_is_master() {
        assert_eq!(stream_seed(42, 0), 42);
        assert_ne!(stream_seed(42, 1), stream_seed(42, 2));
    }

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .map(|_| stream_rng(7, 3).random())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn chunks_cover_everything() {
        for (n, w) in [(10, 3), (0, 4), (5, 8), (100_000, 1)] {
            let c = chunk_bounds(n, w);
            assert_eq!(c.first().unwrap().0, 0);
            assert_eq!(c.last().unwrap().1, n);
            assert!(c.windows(2).all(|p| p[0].1 == p[1].0));
        }
    }
}
