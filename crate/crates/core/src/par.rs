//! Per-particle evaluation with an optional rayon backend.
//!
//! Every closure receives the element index so random streams and results
//! depend only on the index, never on scheduling. Without the `parallel`
//! feature, [`Execution::Parallel`] runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub(crate) fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

pub(crate) fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Execution::Sequential, &xs, |i, x| x * 3 + i as u64);
        let b = map(Execution::Parallel, &xs, |i, x| x * 3 + i as u64);
        assert_eq!(a, b);

        let mut ys = xs.clone();
        for_each_mut(Execution::Parallel, &mut ys, |i, y| *y += i as u64);
        assert!(ys.iter().enumerate().all(|(i, y)| *y == 2 * i as u64));
    }
}
