//! Data-parallel helpers. With the `parallel` feature (default) these fan
//! out over the rayon pool; without it, or under `Execution::Sequential`,
//! they run in order on the calling thread. Results are always returned in
//! input order, so the two modes are observationally identical.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// True when `Execution::Parallel` actually runs on more than one thread.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_indexed<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(&xs, Execution::Sequential, |x| x * x);
        let b = map(&xs, Execution::Parallel, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(map_indexed(5, Execution::Parallel, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }
}
