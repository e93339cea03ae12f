//! Index-ordered map over `0..n`, parallel when the `parallel` feature is on.
//!
//! Results always come back in index order, so any reduction done by the
//! caller over the returned vector is independent of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum number of indices handed to one rayon task.
const MIN_CHUNK: usize = 64;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .with_min_len(MIN_CHUNK)
        .map(f)
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let _ = MIN_CHUNK;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but for coarse work items (one task per index).
#[cfg(feature = "parallel")]
pub fn map_coarse<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_coarse<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether this build runs work items on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
        let w = map_coarse(10, |i| i + 1);
        assert_eq!(w, (1..=10).collect::<Vec<_>>());
    }
}
