//! Batch-level parallelism capped by `VSRPP_THREADS` (default 1).

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Thread count requested through `VSRPP_THREADS`; anything unparsable is 1.
pub fn thread_count() -> usize {
    std::env::var("VSRPP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = thread_count();
        (n > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool")
        })
    })
    .as_ref()
}

/// Evaluates `f(0..n)` and returns the results in index order.
///
/// Each index is computed independently, so the result does not depend on
/// the thread count.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match pool() {
        Some(p) if n > 1 => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        _ => (0..n).map(f).collect(),
    }
}
