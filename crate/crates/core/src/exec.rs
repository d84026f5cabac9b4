//! Data-parallel mapping with a sequential fallback.
//!
//! Every parallel site in the crate goes through [`map_indexed`], which always
//! returns results in input order. Reductions happen afterwards on the ordered
//! vector, so output is independent of the thread schedule.

use sha2::{Digest, Sha256};

/// How a batch of independent evaluations is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon's current thread pool. Falls back to sequential when the
    /// `parallel` feature is disabled.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_indexed<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        Execution::Parallel => par_map(items, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
/// Without the `parallel` feature this just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Worker count `exec` would use on the current pool.
pub fn thread_count(exec: Execution) -> usize {
    match exec {
        Execution::Sequential => 1,
        #[cfg(feature = "parallel")]
        Execution::Parallel => rayon::current_num_threads(),
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel => 1,
    }
}

/// Stable 64-bit seed derived from a base seed and a list of labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Mean that is exact for constant inputs: `first + Σ(x − first) / n`.
pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    let first = values[0];
    let shift: f64 = values.iter().map(|v| v - first).sum();
    first + shift / values.len() as f64
}
