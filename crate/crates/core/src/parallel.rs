//! Thin dispatch layer between rayon and sequential execution.
//!
//! All data-parallel loops in the crate go through these helpers so that the
//! `parallel` feature can be switched off without touching call sites. Both
//! paths produce results in the same (input) order; merging of per-task
//! partials always happens sequentially in that order, which is what makes
//! renders and gradients bit-identical across thread counts and between the
//! two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n` and collect results in index order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Map `f` over a slice and collect results in input order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when this build executes the helpers above on a rayon pool.
pub fn is_parallel_build() -> bool {
    cfg!(feature = "parallel")
}
