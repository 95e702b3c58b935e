//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work is split with rayon; without it the
//! same closures run in index order. Callers only rely on per-index results,
//! so output is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A reusable pool; `install` runs work on it.
pub struct Workers {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            Workers { pool: rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().ok() }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Workers {}
        }
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(f);
        }
        f()
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Calls `f(first_item, chunk)` on consecutive chunks of `out`, each holding
/// `items_per_chunk * item_len` values.
pub fn fill_chunks(
    out: &mut [f64],
    item_len: usize,
    items_per_chunk: usize,
    f: impl Fn(usize, &mut [f64]) + Sync + Send,
) {
    let size = item_len * items_per_chunk.max(1);
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(size)
        .enumerate()
        .for_each(|(c, chunk)| f(c * items_per_chunk, chunk));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(size)
        .enumerate()
        .for_each(|(c, chunk)| f(c * items_per_chunk, chunk));
}

/// As [`fill_chunks`] over two equally shaped buffers.
pub fn fill_chunks_pair(
    a: &mut [f64],
    b: &mut [f64],
    item_len: usize,
    items_per_chunk: usize,
    f: impl Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
) {
    let size = item_len * items_per_chunk.max(1);
    #[cfg(feature = "parallel")]
    a.par_chunks_mut(size)
        .zip(b.par_chunks_mut(size))
        .enumerate()
        .for_each(|(c, (ca, cb))| f(c * items_per_chunk, ca, cb));
    #[cfg(not(feature = "parallel"))]
    a.chunks_mut(size)
        .zip(b.chunks_mut(size))
        .enumerate()
        .for_each(|(c, (ca, cb))| f(c * items_per_chunk, ca, cb));
}
