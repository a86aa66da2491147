//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out over the rayon pool; without it
//! they run the same closures sequentially. Every helper returns results in
//! index order and all reductions happen afterwards in a fixed order, so the
//! output is bit-identical for any worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed work-chunk size for reductions over examples. Independent of the
/// number of workers so that partial sums are always grouped the same way.
pub const REDUCE_CHUNK: usize = 16;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sums `f(i)` for `i in 0..n` into a vector of length `len`.
///
/// Indices are grouped into chunks of [`REDUCE_CHUNK`]; each chunk is summed
/// sequentially (possibly on its own worker) and the chunk partials are then
/// added in chunk order.
pub fn sum_vectors<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_indexed(chunks, |k| {
        let mut acc = vec![0.0; len];
        let lo = k * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        for i in lo..hi {
            f(i, &mut acc);
        }
        acc
    });
    let mut out = vec![0.0; len];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Number of workers data-parallel helpers will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
