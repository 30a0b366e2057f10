//! Data-parallel map over an index range: rayon when the `parallel` feature is
//! on, a plain loop otherwise. Results are always returned in index order, so
//! outputs do not depend on scheduling.

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential map with the same signature, for callers that must not fan out.
pub(crate) fn map_range_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f` on a pool of `threads` workers (`None`: rayon's default).
#[cfg(feature = "parallel")]
pub(crate) fn with_threads<R, F>(threads: Option<usize>, f: F) -> crate::Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| crate::Error::Config(format!("cannot start {n} worker threads: {e}"))),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn with_threads<R, F>(_threads: Option<usize>, f: F) -> crate::Result<R>
where
    F: FnOnce() -> R,
{
    Ok(f())
}
