//! Indexed task execution.
//!
//! All parallelism in this crate flows through [`Executor::map`]: run one
//! pure task per index, collect results in index order. Because tasks are
//! pure and results land in their own slots, any implementation — serial or
//! a thread pool of any width — produces identical output. Reductions over
//! the results always happen afterwards, single-threaded, in index order.

use alloc::vec::Vec;

/// Runs `count` independent tasks and returns their results in index order.
pub trait Executor: Sync {
    fn map<T: Send>(&self, count: usize, task: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Runs every task on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialExecutor;

impl Executor for SerialExecutor {
    fn map<T: Send>(&self, count: usize, task: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..count).map(task).collect()
    }
}
