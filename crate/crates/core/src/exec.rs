//! Order-preserving map over documents, data-parallel when the `parallel`
//! feature is enabled and sequential otherwise.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Executor {
    #[default]
    Sequential,
    /// Worker pool of the given size; 0 uses the global rayon pool.
    Parallel { workers: usize },
}

impl Executor {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Executor::Sequential
        } else {
            Executor::Parallel { workers }
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Executor::Parallel { .. })
    }

    /// `items.iter().map(f)` with results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Executor::Parallel { workers } => {
                use rayon::prelude::*;
                if *workers == 0 {
                    return items.par_iter().map(f).collect();
                }
                match rayon::ThreadPoolBuilder::new().num_threads(*workers).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                    Err(_) => items.iter().map(f).collect(),
                }
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = Executor::Sequential.map(&items, |x| x * x);
        let par = Executor::Parallel { workers: 4 }.map(&items, |x| x * x);
        let global = Executor::Parallel { workers: 0 }.map(&items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, global);
        assert_eq!(Executor::from_workers(1), Executor::Sequential);
    }
}
