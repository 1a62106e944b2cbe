//! Counter-based random streams: every path (or particle replicate) draws
//! from its own ChaCha stream keyed by `(seed, index)`, so results do not
//! depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive an independent seed for a sub-experiment (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chunk size for deterministic reductions. Chunk boundaries depend only on
/// the path count, never on the worker count.
const CHUNK: usize = 2048;

/// Fold `f` over path indices `0..n`, reducing chunk accumulators in index
/// order.
pub fn fold_paths<A, I, F, M>(n: usize, init: I, f: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, u64) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let run = |c: usize| {
        let mut acc = init();
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n);
        for i in lo..hi {
            f(&mut acc, i as u64);
        }
        acc
    };
    let parts = map_indices(chunks, run);
    let mut total = init();
    for part in parts {
        merge(&mut total, part);
    }
    total
}

/// `(0..n).map(f)` in parallel when the `parallel` feature is on; output
/// order is always index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Size the global worker pool from `INTERVAL_AVOID_THREADS`, if set.
/// Returns the number of workers in use.
pub fn init_thread_pool() -> usize {
    #[cfg(feature = "parallel")]
    {
        let requested = std::env::var("INTERVAL_AVOID_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        if let Some(n) = requested {
            // a pool may already exist (tests, repeated calls); that is fine
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
