use std::sync::OnceLock;

use rayon::ThreadPool;

/// Shared worker pool sized by `GZK_THREADS` (default: logical cores).
///
/// All parallel regions in the crate run inside this pool and write to
/// disjoint output ranges, so results are bit-identical for any worker count.
pub(crate) fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("GZK_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(num_threads_default);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build worker pool")
    })
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
