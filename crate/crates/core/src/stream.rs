//! Deterministic chunked streaming over path ensembles.
//!
//! Large runs never fit in memory (10⁶ steps × 10⁵ paths is terabytes), so
//! estimators consume paths through a [`PathSource`] that can regenerate
//! any path on demand. Paths are processed in fixed chunks of consecutive
//! path ids; chunk partials are merged in chunk order. Because the chunk
//! layout is a pure function of the path count, results are bitwise
//! identical for any worker count.

use rayon::prelude::*;

use crate::error::Result;
use crate::grid_noise::TimeGrid;
use crate::walker::{Ensemble, Path};

/// Something that can deterministically (re)produce dense paths by id.
pub trait PathSource: Sync {
    fn grid(&self) -> TimeGrid;
    fn n_paths(&self) -> usize;
    /// Writes values x(t_0)..x(t_n) for the given path into `out`.
    fn fill_path(&self, path_id: u64, out: &mut Vec<f64>) -> Result<()>;
}

/// Replays an in-memory ensemble through the streaming interface, so the
/// in-memory and streamed estimator entry points share one code path.
pub struct EnsembleReplay<'a> {
    ensemble: &'a Ensemble,
}

impl<'a> EnsembleReplay<'a> {
    pub fn new(ensemble: &'a Ensemble) -> Self {
        Self { ensemble }
    }
}

impl PathSource for EnsembleReplay<'_> {
    fn grid(&self) -> TimeGrid {
        *self.ensemble.grid()
    }

    fn n_paths(&self) -> usize {
        self.ensemble.n_paths()
    }

    fn fill_path(&self, path_id: u64, out: &mut Vec<f64>) -> Result<()> {
        let path = &self.ensemble.paths()[path_id as usize];
        out.clear();
        out.extend_from_slice(path.values());
        Ok(())
    }
}

/// Fixed chunk width for a scan. Must depend only on the path count (never
/// on the worker count); `partials` bounds how many chunk partials exist at
/// once, which matters when a partial holds per-cell accumulators.
pub fn chunk_width(n_paths: usize, max_partials: usize) -> usize {
    let max_partials = max_partials.max(1);
    usize::max(1, n_paths.div_ceil(max_partials))
}

/// Streams every path through `fold`, returning one partial per chunk in
/// chunk order. `fold` sees paths in increasing path id within its chunk.
pub fn scan<S, P, I, F>(source: &S, paths_per_chunk: usize, init: I, fold: F) -> Result<Vec<P>>
where
    S: PathSource + ?Sized,
    P: Send,
    I: Fn() -> P + Sync,
    F: Fn(&mut P, u64, &[f64]) + Sync,
{
    let n_paths = source.n_paths();
    let width = paths_per_chunk.max(1);
    let starts: Vec<usize> = (0..n_paths).step_by(width).collect();
    let partials: Vec<Result<P>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + width).min(n_paths);
            let mut partial = init();
            let mut buf = Vec::new();
            for pid in start..end {
                source
                    .fill_path(pid as u64, &mut buf)
                    .map_err(|e| e.at_path(pid as u64))?;
                fold(&mut partial, pid as u64, &buf);
            }
            Ok(partial)
        })
        .collect();
    // Surface the error from the earliest chunk so failures are
    // deterministic too.
    partials.into_iter().collect()
}

/// Streams paths and merges the chunk partials in order.
pub fn scan_merged<S, P, I, F, M>(
    source: &S,
    paths_per_chunk: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> Result<P>
where
    S: PathSource + ?Sized,
    P: Send,
    I: Fn() -> P + Sync,
    F: Fn(&mut P, u64, &[f64]) + Sync,
    M: FnMut(&mut P, P),
{
    let mut partials = scan(source, paths_per_chunk, &init, fold)?.into_iter();
    let mut acc = partials.next().unwrap_or_else(&init);
    for p in partials {
        merge(&mut acc, p);
    }
    Ok(acc)
}

/// Materializes paths, keeping every `stride`-th grid point.
pub fn materialize<S: PathSource + ?Sized>(source: &S, stride: usize) -> Result<Vec<Path>> {
    let grid = source.grid();
    let width = chunk_width(source.n_paths(), 256);
    let chunks = scan(
        source,
        width,
        Vec::new,
        |paths: &mut Vec<Result<Path>>, pid, values| {
            let stored: Vec<f64> = if stride == 1 {
                values.to_vec()
            } else {
                values.iter().copied().step_by(stride).collect()
            };
            paths.push(Path::from_values(grid, pid, stride, stored));
        },
    )?;
    let mut out = Vec::with_capacity(source.n_paths());
    for chunk in chunks {
        for path in chunk {
            out.push(path?);
        }
    }
    Ok(out)
}

/// Per-path values at the given grid indices: one vector per index, in
/// path order.
pub fn collect_marginals<S: PathSource + ?Sized>(
    source: &S,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let width = chunk_width(source.n_paths(), 256);
    let chunks = scan(
        source,
        width,
        || vec![Vec::new(); indices.len()],
        |cols: &mut Vec<Vec<f64>>, _pid, values| {
            for (col, &k) in cols.iter_mut().zip(indices) {
                col.push(values[k]);
            }
        },
    )?;
    let mut out = vec![Vec::with_capacity(source.n_paths()); indices.len()];
    for chunk in chunks {
        for (col, part) in out.iter_mut().zip(chunk) {
            col.extend(part);
        }
    }
    Ok(out)
}
