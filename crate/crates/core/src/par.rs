//! Data-parallel helpers.
//!
//! Every hot loop in the crate (per-record feature extraction, per-client
//! statistics updates, dataset synthesis) goes through these functions. With
//! the `parallel` feature they fan out over the rayon pool; without it, or when
//! [`Execution::Sequential`] is requested, they run in order on the calling
//! thread. Results are returned in input order either way, so output never
//! depends on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_range`]; returns the error of the lowest failing index.
pub fn try_map_range<R, F>(exec: Execution, n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs `f` on every element mutably; stops at (and returns) the first error in index order.
pub fn try_for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F) -> Result<()>
where
    T: Send,
    F: Fn(&mut T) -> Result<()> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        let outcomes: Vec<Result<()>> = items.par_iter_mut().map(f).collect();
        return outcomes.into_iter().collect();
    }
    let _ = exec;
    items.iter_mut().try_for_each(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn modes_agree_and_keep_order() {
        let seq = map_range(Execution::Sequential, 100, |i| i * i);
        let par = map_range(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn first_error_wins() {
        let out: Result<Vec<usize>> = try_map_range(Execution::Parallel, 10, |i| {
            if i >= 3 {
                Err(Error::Input(format!("bad {i}")))
            } else {
                Ok(i)
            }
        });
        match out {
            Err(Error::Input(msg)) => assert_eq!(msg, "bad 3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn for_each_mut_touches_everything() {
        let mut v = vec![1u32; 17];
        try_for_each_mut(Execution::Parallel, &mut v, |x| {
            *x += 1;
            Ok(())
        })
        .unwrap();
        assert!(v.iter().all(|&x| x == 2));
    }
}
