//! Execution facade: data-parallel map with a sequential fallback.
//!
//! Work items derive their own RNG streams from their index (see
//! [`crate::seeding`]), and results are collected in index order, so the
//! parallel and sequential paths return identical values.

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_indexed_sequential(n, f)
}

/// Sequential map over `0..n`, available regardless of features. The
/// benchmark suite uses this as the baseline against the parallel path.
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
