//! Replica fan-out. Results come back in replica order whatever the thread
//! count, so reports do not depend on it.

use rayon::prelude::*;

pub const THREADS_ENV: &str = "SANDPILE_LAB_THREADS";

/// `SANDPILE_LAB_THREADS`, else the available cores.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_stable() {
        let a = map_indexed(50, 1, |i| i * i);
        let b = map_indexed(50, 4, |i| i * i);
        assert_eq!(a, b);
    }
}
