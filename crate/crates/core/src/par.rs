//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work fans out over a rayon pool of
//! the requested size; a single worker, or a build without the feature,
//! runs plain iterators. Results are always collected in input order so any
//! reduction over them happens in a fixed order.

/// Worker count for a simulation. `Workers(1)` is strictly sequential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workers(usize);

impl Workers {
    pub fn new(n: usize) -> Self {
        Self(n.max(1))
    }

    pub fn sequential() -> Self {
        Self(1)
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn count(&self) -> usize {
        self.0
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::available()
    }
}

/// Executes closures on a fixed-size pool.
pub struct Executor {
    workers: Workers,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Executor {
    pub fn new(workers: Workers) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = (workers.count() > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers.count())
                    .build()
                    .expect("failed to build rayon pool")
            });
            Self { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        Self { workers }
    }

    pub fn workers(&self) -> Workers {
        self.workers
    }

    /// `items.iter().map(f)` collected in order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(f).collect());
        }
        items.iter().map(f).collect()
    }

    /// `items.iter_mut().map(f)` collected in order.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter_mut().map(f).collect());
        }
        items.iter_mut().map(f).collect()
    }
}

/// Maps over `items` on the current rayon pool when called from inside one,
/// otherwise sequentially. Used for per-sample work inside a batch.
pub(crate) fn map_nested<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if rayon::current_thread_index().is_some() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}
