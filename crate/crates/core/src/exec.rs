//! Row-level data parallelism with a sequential fallback.
//!
//! Every helper here produces output in input order and never reduces across
//! items, so the sequential and parallel paths return bitwise-identical
//! results. Reductions are left to callers, which sum in index order.

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls back
    /// to sequential iteration.
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

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `0..n` through `f`, collecting results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps each element of `items` through `f`, preserving order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Calls `f(row_index, row)` on each `width`-sized chunk of `buf`.
    pub fn for_each_row<F>(self, buf: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            buf.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
            return;
        }
        buf.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
}
