//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default), `map_collect` fans work out over a
//! rayon pool; without it, the same signature runs a plain sequential map.
//! Both paths preserve input order, so any caller that combines the results
//! with a sequential reduction gets bit-identical output regardless of the
//! feature flag or the number of worker threads.

/// Order-preserving map over a slice, parallel when the feature allows it.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Order-preserving map over a slice (sequential build).
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range, parallel when available.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_collect(&idx, |&i| f(i))
}

/// Run `f` inside a dedicated thread pool of `n` threads.
///
/// `n = 0` means "library default". With the sequential build the closure
/// simply runs on the calling thread. Results must not depend on `n`; the
/// toolkit guarantees that by always reducing mapped results in input order.
#[cfg(feature = "parallel")]
pub fn with_threads<R, F>(n: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if n == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool construction")
            .install(f)
    }
}

/// Run `f` on the calling thread (sequential build).
#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, F>(n: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let _ = n;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = map_collect(&xs, |&x| x * x);
        assert_eq!(ys, xs.iter().map(|&x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn thread_count_does_not_change_ordered_reduction() {
        let xs: Vec<f64> = (0..5000).map(|i| (i as f64).sin()).collect();
        let sum_serial: f64 = {
            let parts = with_threads(1, || map_collect(&xs, |&x| x * 1.000001));
            parts.iter().fold(0.0, |a, b| a + b)
        };
        let sum_par: f64 = {
            let parts = with_threads(4, || map_collect(&xs, |&x| x * 1.000001));
            parts.iter().fold(0.0, |a, b| a + b)
        };
        assert_eq!(sum_serial.to_bits(), sum_par.to_bits());
    }
}
