//! Deterministic data-parallel primitives.
//!
//! Every reduction in this crate runs over a fixed chunk grid: items are
//! grouped into consecutive chunks of [`CHUNK`] (by item index), each chunk
//! is folded sequentially in item order into a fresh partial, and the
//! partials are combined in chunk order. The grid depends only on the item
//! count, never on thread count or scheduling, so the rayon path (feature
//! `parallel`, default) and the sequential fallback produce bitwise-identical
//! floating-point results.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed reduction chunk size (items per partial accumulator).
pub const CHUNK: usize = 32;

fn chunk_bounds(items: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..items.div_ceil(CHUNK)).map(move |c| (c * CHUNK, ((c + 1) * CHUNK).min(items)))
}

/// Sums per-item vector contributions into a `dim`-length vector.
///
/// `add(i, buf)` must add item `i`'s contribution into `buf` (it may fail,
/// e.g. on a non-finite per-sample gradient). On error the earliest failing
/// item's error is returned regardless of execution order.
pub fn try_sum_vectors<F>(items: usize, dim: usize, add: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let partials = try_partials(items, dim, &add)?;
    let mut total = vec![0.0; dim];
    for partial in &partials {
        for (t, p) in total.iter_mut().zip(partial) {
            *t += p;
        }
    }
    Ok(total)
}

/// Infallible variant of [`try_sum_vectors`].
pub fn sum_vectors<F>(items: usize, dim: usize, add: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    try_sum_vectors(items, dim, |i, buf| {
        add(i, buf);
        Ok(())
    })
    .expect("infallible contribution")
}

#[cfg(feature = "parallel")]
fn try_partials<F>(items: usize, dim: usize, add: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let bounds: Vec<_> = chunk_bounds(items).collect();
    let results: Vec<Result<Vec<f64>>> = bounds
        .par_iter()
        .map(|&(lo, hi)| chunk_partial(lo, hi, dim, add))
        .collect();
    // Errors surface in chunk order so parallel and sequential agree on
    // which failure is reported.
    results.into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
fn try_partials<F>(items: usize, dim: usize, add: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    chunk_bounds(items)
        .map(|(lo, hi)| chunk_partial(lo, hi, dim, add))
        .collect()
}

fn chunk_partial<F>(lo: usize, hi: usize, dim: usize, add: &F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()>,
{
    let mut partial = vec![0.0; dim];
    for i in lo..hi {
        add(i, &mut partial)?;
    }
    Ok(partial)
}

/// Always-sequential reference reduction (same chunk grid). Exists so the
/// benchmark suite and the equality tests can compare execution modes inside
/// a `parallel`-featured build.
pub fn try_sum_vectors_sequential<F>(items: usize, dim: usize, add: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()>,
{
    let mut total = vec![0.0; dim];
    for (lo, hi) in chunk_bounds(items) {
        let partial = chunk_partial(lo, hi, dim, &add)?;
        for (t, p) in total.iter_mut().zip(&partial) {
            *t += p;
        }
    }
    Ok(total)
}

/// Counts items satisfying a predicate. Integer addition is associative, so
/// no chunking discipline is needed for determinism.
pub fn count_where<F>(items: usize, pred: F) -> usize
where
    F: Fn(usize) -> bool + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..items).into_par_iter().filter(|&i| pred(i)).count()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..items).filter(|&i| pred(i)).count()
    }
}

/// Maps `f` over `0..items`, returning results in item order.
pub fn map_collect<T, F>(items: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..items).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..items).map(f).collect()
    }
}
