//! Thread-pool executor; results come back in index order whatever the worker count.

use rayon::prelude::*;
use shift_core::exec::Executor;

use crate::error::{CliError, Result};

pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `workers == 0` uses one worker per available core.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.pool.current_num_threads() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_index_order() {
        let p = Pool::new(3).unwrap();
        assert_eq!(p.workers(), 3);
        let v = p.map(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
