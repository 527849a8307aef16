//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature the [`Exec::Parallel`] strategy fans work out
//! over the current rayon pool; without it every call runs sequentially.
//! Results always come back in input order and reductions happen afterwards
//! on the caller's thread, so both strategies produce bit-identical output.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        Exec::auto()
    }
}

impl Exec {
    /// Parallel when compiled with the `parallel` feature.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// Strategy for a worker budget: one thread means sequential.
    pub fn for_threads(threads: usize) -> Self {
        if threads > 1 {
            Exec::auto()
        } else {
            Exec::Sequential
        }
    }
}

/// `f(0), f(1), …, f(n - 1)` collected in order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// `f` applied to every item, collected in order.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}

/// Runs `f` inside a pool of `threads` workers (the global pool when the
/// `parallel` feature is off or `threads` is zero).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}
