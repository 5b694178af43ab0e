#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How independent work items (query-tile rows, head slices, seeds) are scheduled.
///
/// `Parallel` uses the ambient rayon pool when the `parallel` feature is
/// enabled and silently degrades to `Sequential` otherwise. Results never
/// depend on the policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..len`, preserving order.
    pub(crate) fn map_indices<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Maps `f` over `items` paired with mutable state, preserving order.
    pub(crate) fn map_zip_mut<A, B, R, F>(self, items: &[A], state: &mut [B], f: F) -> Vec<R>
    where
        A: Sync,
        B: Send,
        R: Send,
        F: Fn(usize, &A, &mut B) -> R + Sync + Send,
    {
        assert_eq!(items.len(), state.len());
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items
                .par_iter()
                .zip(state.par_iter_mut())
                .enumerate()
                .map(|(i, (a, b))| f(i, a, b))
                .collect();
        }
        items
            .iter()
            .zip(state.iter_mut())
            .enumerate()
            .map(|(i, (a, b))| f(i, a, b))
            .collect()
    }
}
