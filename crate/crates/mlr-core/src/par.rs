//! Deterministic parallelism helpers.
//!
//! Work is split into fixed-size chunks and reductions always combine the
//! per-chunk partials in chunk order, so results are bit-identical no matter
//! how many workers run (or whether the `parallel` feature is enabled at all).

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per work unit for batch-level loops.
pub(crate) const ITEM_CHUNK: usize = 8;

/// Apply `f` to every equally-sized item slice of `buf`. Writes are disjoint.
pub(crate) fn for_each_item<F>(buf: &mut [f64], item_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(item_len > 0 && buf.len() % item_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(item_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, chunk) in buf.chunks_mut(item_len).enumerate() {
            f(i, chunk);
        }
    }
}

/// Apply `f` to every fixed-size span of a flat buffer (elementwise passes).
pub(crate) fn for_each_span<F>(buf: &mut [f64], span: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(span > 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(span)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, chunk) in buf.chunks_mut(span).enumerate() {
            f(i, chunk);
        }
    }
}

/// Independent per-index computation collected in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`for_each_item`] but with a second per-item index buffer.
pub(crate) fn for_each_item_with_index<F>(
    buf: &mut [f64],
    item_len: usize,
    idx: &mut [usize],
    idx_len: usize,
    f: F,
) where
    F: Fn(usize, &mut [f64], &mut [usize]) + Sync + Send,
{
    debug_assert!(item_len > 0 && idx_len > 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(item_len)
            .zip(idx.par_chunks_mut(idx_len))
            .enumerate()
            .for_each(|(i, (chunk, ichunk))| f(i, chunk, ichunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (chunk, ichunk)) in buf.chunks_mut(item_len).zip(idx.chunks_mut(idx_len)).enumerate()
        {
            f(i, chunk, ichunk);
        }
    }
}

/// Sum per-chunk partial buffers into `acc`, always in chunk order.
///
/// `per_chunk(range, partial)` accumulates the contribution of items in
/// `range` into a zeroed buffer of `acc.len()` values.
pub(crate) fn chunked_sum_into<F>(n_items: usize, acc: &mut [f64], per_chunk: F)
where
    F: Fn(core::ops::Range<usize>, &mut [f64]) + Sync + Send,
{
    let ranges: Vec<_> = (0..n_items)
        .step_by(ITEM_CHUNK)
        .map(|s| s..(s + ITEM_CHUNK).min(n_items))
        .collect();
    let compute = |range: core::ops::Range<usize>| {
        let mut partial = vec![0.0; acc.len()];
        per_chunk(range, &mut partial);
        partial
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = ranges.into_par_iter().map(compute).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = ranges.into_iter().map(compute).collect();

    for partial in partials {
        for (a, p) in acc.iter_mut().zip(partial) {
            *a += p;
        }
    }
}
