//! Item-level executor. With the `parallel` feature, items run on a bounded
//! rayon pool; without it, or with a parallelism of 1, they run in order on
//! the calling thread. Results always come back in input order.

/// Maps `f` over `items` using at most `parallelism` threads.
pub fn map_items<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallelism > 1 && items.len() > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => log::warn!("thread pool unavailable ({e}); running sequentially"),
            }
        }
    }
    let _ = parallelism;
    items.iter().map(f).collect()
}

/// Whether this build can run items concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
