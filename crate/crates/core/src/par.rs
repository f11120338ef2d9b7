//! Data-parallel helpers with a sequential fallback.
//!
//! All per-item inner loops (strategy pipelines, metric aggregation, distance
//! matrices, Monte Carlo simulation) go through these functions. With the
//! default `parallel` feature they fan out over rayon; without it they run
//! sequentially. Output order always matches input order, so results are
//! identical either way. The `*_seq` variants are always compiled so the
//! bench suite can compare both paths in one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map, sequential reference path.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over the active execution backend.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_seq(items, f)
}

/// Sum of `f` over items, sequential reference path.
pub fn sum_by_seq<T, F>(items: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64,
{
    items.iter().map(f).sum()
}

/// Sum of `f` over items on the active backend.
///
/// Summation is reassociated under rayon; callers needing bit-stable totals
/// (report emission) use the sequential path on sorted input instead.
#[cfg(feature = "parallel")]
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    items.par_iter().map(f).sum()
}

#[cfg(not(feature = "parallel"))]
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64,
{
    sum_by_seq(items, f)
}
