//! Data-parallel iteration with a sequential fallback.
//!
//! Batch-level work in this crate (clip sweeps, per-seed noise baselines,
//! finite-difference columns, per-track metric evaluation) goes through
//! [`par_map_indexed`]/[`par_map`]. With the default `parallel` feature these
//! use rayon; without it they degrade to plain sequential iteration, so the
//! crate builds on targets without threads. Output order is the input order
//! in both modes, which keeps every caller deterministic.
//!
//! [`seq_map_indexed`] is always sequential and exists so benchmarks can
//! compare both code paths in a single build.

/// True when the rayon-backed path is compiled in.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
pub fn par_map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(data: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    data.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(data: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    data.iter().map(f).collect()
}

/// Sequential map over indices, regardless of features.
pub fn seq_map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}
