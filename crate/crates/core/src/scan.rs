//! Row-parallel map helpers.
//!
//! All per-row control scans in this crate are pure functions of the row
//! index, so they can be evaluated in any order. Results are collected in
//! row order, which keeps parallel output bit-identical to the sequential
//! fallback (ties inside a row are resolved by the scan itself, never by
//! scheduling).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_rows<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_rows<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential reference version of [`map_rows`]; kept unconditionally so
/// benchmarks can compare both code paths in a single build.
pub fn map_rows_seq<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}
