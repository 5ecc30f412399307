//! Data-parallel execution of independent work items.
//!
//! With the `parallel` feature and more than one worker, items run on a
//! dedicated rayon pool. Otherwise they run in a plain sequential loop. In
//! both cases the output vector is ordered by item index, so any reduction
//! performed afterwards is identical across worker counts.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone)]
pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `workers == 0` means one worker per available core.
    pub fn new(workers: usize) -> Self {
        let workers = if workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            workers
        };
        if workers <= 1 {
            return Self::sequential();
        }
        Self::build(workers)
    }

    #[cfg(feature = "parallel")]
    fn build(workers: usize) -> Self {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => Executor {
                workers,
                pool: Some(Arc::new(pool)),
            },
            Err(e) => {
                log::warn!("failed to build thread pool ({e}); running sequentially");
                Self::sequential()
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn build(workers: usize) -> Self {
        log::info!("built without the `parallel` feature; ignoring workers = {workers}");
        Self::sequential()
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Evaluate `f(0..len)` and return the results in index order.
    pub fn map_indexed<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..len).into_par_iter().map(&f).collect());
        }
        (0..len).map(f).collect()
    }

    /// Like [`map_indexed`](Self::map_indexed) but stops at the first error
    /// in index order.
    pub fn try_map_indexed<T, E, F>(&self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map_indexed(len, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_output_for_any_worker_count() {
        let expect: Vec<usize> = (0..1000).map(|i| i * i).collect();
        for w in [1, 2, 8] {
            let ex = Executor::new(w);
            assert_eq!(ex.map_indexed(1000, |i| i * i), expect);
        }
    }

    #[test]
    fn first_error_in_index_order() {
        let ex = Executor::new(4);
        let r: Result<Vec<usize>, usize> =
            ex.try_map_indexed(100, |i| if i % 30 == 29 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(29));
    }
}
