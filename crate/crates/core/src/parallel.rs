//! Deterministic work splitting.
//!
//! Monte-Carlo loops and batch gradients are partitioned into indexed blocks;
//! each block derives its randomness from its own substream and blocks are
//! reduced in index order. The result is therefore bit-identical for any
//! worker count — single-threaded runs are just the one-worker special case.

use rayon::prelude::*;

/// Applies `f` to every index in `0..n` and returns the results in order.
/// `threads <= 1` runs serially on the caller's thread.
pub fn map_indexed<T: Send>(
    n: usize,
    threads: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    if threads <= 1 || n <= 1 {
        (0..n).map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.min(n))
            .build();
        match pool {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
            // Pool creation can only fail under resource exhaustion; fall
            // back to the serial path rather than aborting the computation.
            Err(_) => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_and_thread_count_independent() {
        let serial = map_indexed(64, 1, |i| i * i);
        let parallel = map_indexed(64, 4, |i| i * i);
        assert_eq!(serial, parallel);
        assert_eq!(serial[10], 100);
    }
}
