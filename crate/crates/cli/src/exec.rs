//! Worker-pool executor backed by rayon.

use diffcollage_core::exec::Executor;
use rayon::prelude::*;

/// Runs indexed tasks on a dedicated rayon pool of a fixed width. Results
/// are collected in index order, so output is identical to the serial
/// executor at any worker count.
pub struct PoolExecutor {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl PoolExecutor {
    pub fn new(workers: usize) -> anyhow::Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()?;
        Ok(PoolExecutor { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for PoolExecutor {
    fn map<T: Send>(&self, count: usize, task: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        self.pool
            .install(|| (0..count).into_par_iter().map(task).collect())
    }
}
