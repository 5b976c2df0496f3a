//! Work splitting. With the `parallel` feature the closures run on the
//! rayon pool; every output element is still produced by exactly one call,
//! so results do not depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use alloc::vec::Vec;

/// Call `f(i, chunk)` for each `len`-sized chunk of `out`.
pub(crate) fn for_each_plane<F>(out: &mut [f32], len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(len).enumerate().for_each(|(i, c)| f(i, c));
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}
