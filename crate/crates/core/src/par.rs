//! Data-parallel helpers with a sequential fallback.
//!
//! Sweeps over receiver positions, codebook entries and parameters go through
//! [`map_indexed`]. With the `parallel` feature the work is fanned out on the
//! rayon pool; without it (or with [`Execution::Sequential`]) it runs on the
//! calling thread. Results are always returned in index order, so reductions
//! downstream are schedule independent.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping the worker count of parallel sweeps.
pub const THREADS_ENV: &str = "IRS_SIM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
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

/// Evaluates `f(0), f(1), ..., f(n - 1)` and collects the results in order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Sizes the global rayon pool from `IRS_SIM_THREADS`, if set.
///
/// Returns the requested thread count. Calling this after the pool has been
/// initialised is harmless; the existing pool is kept.
pub fn configure_threads_from_env() -> Option<usize> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)?;
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Some(threads)
}
