//! Corpus-level execution: pipeline runs over many independent programs
//! are embarrassingly parallel. With the `parallel` feature (default)
//! the batch helpers fan out over rayon; without it they fall back to a
//! plain sequential map with identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over the items, in parallel when the feature is enabled.
pub fn run_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(items, f)
    }
}

/// Always-sequential map, kept callable for benchmark comparisons.
pub fn run_batch_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
