//! Order-preserving data-parallel helpers.
//!
//! Every parallel loop in the crate goes through these functions. Each item is
//! computed independently and results are collected in input order, so output
//! never depends on the number of worker threads. With the `parallel` feature
//! disabled the same functions run sequentially.

/// Sequential implementations, always available.
pub mod seq {
    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R,
    {
        (0..n).map(f).collect()
    }

    pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        F: Fn(usize, &T) -> R,
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    pub fn try_map_range<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
    where
        F: Fn(usize) -> Result<R, E>,
    {
        (0..n).map(f).collect()
    }

    pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [T]),
    {
        data.chunks_mut(chunk.max(1))
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Rayon-backed implementations.
#[cfg(feature = "parallel")]
pub mod par {
    use rayon::prelude::*;

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }

    pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    pub fn try_map_range<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }

    pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        data.par_chunks_mut(chunk.max(1))
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

#[cfg(feature = "parallel")]
pub use par::*;
#[cfg(not(feature = "parallel"))]
pub use seq::*;

/// Number of worker threads the default backend will use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (no-op pool when the
/// `parallel` feature is off).
pub fn with_workers<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}
