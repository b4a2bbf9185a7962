//! Execution strategy for per-subject work.
//!
//! Implementations may run the closure on several threads but must return the
//! results in index order, so that every reduction over them is performed in a
//! fixed order and results do not depend on the degree of parallelism.

use alloc::vec::Vec;

pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
