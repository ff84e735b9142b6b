//! Execution policy for the data-parallel loops (restarts, Monte Carlo
//! sweeps, batch diagnostics).
//!
//! With the `parallel` feature (default) independent work items are spread
//! over the rayon pool; without it every policy runs sequentially. Results are
//! always returned in index order, so output never depends on scheduling.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be distributed across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0..n)` under the given policy, preserving index order.
pub fn map_indices<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps over a slice under the given policy, preserving order.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indices(exec, items.len(), |i| f(&items[i]))
}

/// Cooperative cancellation flag, checked once per solver iteration.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

pub(crate) fn check_cancel(token: Option<&CancelToken>) -> crate::Result<()> {
    match token {
        Some(t) if t.is_cancelled() => Err(crate::Error::Cancelled),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_under_both_policies() {
        let seq = map_indices(Execution::Sequential, 1000, |i| i * i);
        let par = map_indices(Execution::Parallel, 1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }

    #[test]
    fn cancel_token_trips() {
        let t = CancelToken::new();
        assert!(check_cancel(Some(&t)).is_ok());
        t.clone().cancel();
        assert!(matches!(check_cancel(Some(&t)), Err(crate::Error::Cancelled)));
        assert!(check_cancel(None).is_ok());
    }
}
