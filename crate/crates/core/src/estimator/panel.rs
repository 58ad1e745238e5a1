//! Increment panel: per-step columns of (x, Δx, previous Δx) collected in
//! a single streaming pass.
//!
//! A full decomposition scan re-simulates the ensemble three times; when
//! several analyses need increments at a modest number of analysis steps,
//! collecting the columns once and estimating from the panel costs one
//! pass instead of five. Columns are written at fixed path positions, so
//! the panel, and everything derived from it, is identical for any worker
//! count.

use crate::error::{Error, Result};
use crate::grid_noise::TimeGrid;
use crate::kahan::KahanSum;
use crate::stream::{self, PathSource};

use super::decomposition::{bin_of, CellEstimate, DecompositionEstimate, StepSelection};
use super::markov::{markov_from_groups, GroupMoments, MarkovReport};

pub struct IncrementPanel {
    grid: TimeGrid,
    steps: Vec<usize>,
    n_paths: usize,
    /// x(t_k) per analyzed step, one entry per path.
    x: Vec<Vec<f64>>,
    /// x(t_{k+1}) − x(t_k) per analyzed step.
    dx: Vec<Vec<f64>>,
    /// x(t_k) − x(t_{k-1}); empty column where k = 0.
    prev_dx: Vec<Vec<f64>>,
}

impl IncrementPanel {
    /// One pass over the source, extracting columns at the selected steps.
    pub fn collect<S: PathSource + ?Sized>(source: &S, steps: &StepSelection) -> Result<Self> {
        let grid = source.grid();
        let indices = steps.indices().to_vec();
        let n_paths = source.n_paths();
        let width = stream::chunk_width(n_paths, 256);
        let n_cols = indices.len();
        let chunks = stream::scan(
            source,
            width,
            || (vec![Vec::new(); n_cols], vec![Vec::new(); n_cols], vec![Vec::new(); n_cols]),
            |(x, dx, prev), _pid, values| {
                for (j, &k) in indices.iter().enumerate() {
                    x[j].push(values[k]);
                    dx[j].push(values[k + 1] - values[k]);
                    if k > 0 {
                        prev[j].push(values[k] - values[k - 1]);
                    }
                }
            },
        )?;
        let mut x = vec![Vec::with_capacity(n_paths); n_cols];
        let mut dx = vec![Vec::with_capacity(n_paths); n_cols];
        let mut prev_dx = vec![Vec::new(); n_cols];
        for (cx, cdx, cprev) in chunks {
            for j in 0..n_cols {
                x[j].extend(&cx[j]);
                dx[j].extend(&cdx[j]);
                prev_dx[j].extend(&cprev[j]);
            }
        }
        Ok(Self {
            grid,
            steps: indices,
            n_paths,
            x,
            dx,
            prev_dx,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Binned decomposition over the panel's steps; same estimator as the
    /// streamed form, fed column-wise.
    pub fn estimate_decomposition(&self, n_xbins: usize, min_count: usize) -> Result<DecompositionEstimate> {
        if n_xbins == 0 {
            return Err(Error::InvalidConfig("n_xbins must be at least 1".into()));
        }
        if min_count < 30 {
            return Err(Error::InvalidConfig(format!(
                "min_count must be at least 30, got {min_count}"
            )));
        }
        if self.n_paths < 2 {
            return Err(Error::InsufficientData(format!(
                "decomposition needs at least 2 paths, got {}",
                self.n_paths
            )));
        }
        let dt = self.grid.dt();
        let sdt = dt.sqrt();
        let n_cols = self.steps.len();

        let mut ranges = Vec::with_capacity(n_cols);
        for col in &self.x {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            ranges.push((lo, hi));
        }

        let mut cells = Vec::with_capacity(n_cols * n_xbins);
        for j in 0..n_cols {
            let (lo, hi) = ranges[j];
            let mut count = vec![0u64; n_xbins];
            let mut sum_dx = vec![KahanSum::new(); n_xbins];
            let mut sum_dx2 = vec![KahanSum::new(); n_xbins];
            for (&xv, &dxv) in self.x[j].iter().zip(&self.dx[j]) {
                let b = bin_of(lo, hi, n_xbins, xv);
                count[b] += 1;
                sum_dx[b].add(dxv);
                sum_dx2[b].add(dxv * dxv);
            }
            let mut bins: Vec<CellEstimate> = (0..n_xbins)
                .map(|b| {
                    if (count[b] as usize) < min_count {
                        return CellEstimate::undetermined(count[b]);
                    }
                    let n = count[b] as f64;
                    let mean_dx = sum_dx[b].value() / n;
                    let mean_dx2 = sum_dx2[b].value() / n;
                    let variance = (mean_dx2 - mean_dx * mean_dx).max(0.0);
                    CellEstimate {
                        count: count[b],
                        drift: mean_dx / dt,
                        volatility: (variance / dt).sqrt(),
                        mean_eta: f64::NAN,
                        mean_eta_sq: f64::NAN,
                        determined: true,
                    }
                })
                .collect();

            let b_dt: Vec<f64> = bins.iter().map(|c| c.drift * dt).collect();
            let s_sdt: Vec<f64> = bins.iter().map(|c| c.volatility * sdt).collect();
            let mut sum_eta = vec![KahanSum::new(); n_xbins];
            let mut sum_eta2 = vec![KahanSum::new(); n_xbins];
            for (&xv, &dxv) in self.x[j].iter().zip(&self.dx[j]) {
                let b = bin_of(lo, hi, n_xbins, xv);
                if s_sdt[b] > 0.0 {
                    let eta = (dxv - b_dt[b]) / s_sdt[b];
                    sum_eta[b].add(eta);
                    sum_eta2[b].add(eta * eta);
                }
            }
            for (b, cell) in bins.iter_mut().enumerate() {
                if cell.determined && cell.volatility > 0.0 {
                    let n = cell.count as f64;
                    cell.mean_eta = sum_eta[b].value() / n;
                    cell.mean_eta_sq = sum_eta2[b].value() / n;
                }
            }
            cells.extend(bins);
        }

        Ok(DecompositionEstimate::from_parts(
            self.grid,
            n_xbins,
            min_count,
            self.steps.clone(),
            ranges,
            cells,
        ))
    }

    /// Markov diagnostic over the panel's steps with a previous increment.
    pub fn markov_diagnostic(&self, n_xbins: usize) -> Result<MarkovReport> {
        if n_xbins == 0 {
            return Err(Error::InvalidConfig("n_xbins must be at least 1".into()));
        }
        let usable: Vec<usize> = (0..self.steps.len()).filter(|&j| self.steps[j] > 0).collect();
        let n_cells = usable.len() * n_xbins;
        let mut groups = vec![(GroupMoments::new(), GroupMoments::new()); n_cells];
        let mut grid_steps = Vec::with_capacity(usable.len());
        for (cell_j, &j) in usable.iter().enumerate() {
            grid_steps.push(self.steps[j]);
            let col = &self.x[j];
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            for ((&xv, &dxv), &prev) in col.iter().zip(&self.dx[j]).zip(&self.prev_dx[j]) {
                let cell = &mut groups[cell_j * n_xbins + bin_of(lo, hi, n_xbins, xv)];
                if prev < 0.0 {
                    cell.0.add(dxv);
                } else {
                    cell.1.add(dxv);
                }
            }
        }
        Ok(markov_from_groups(self.n_paths, &grid_steps, n_xbins, groups))
    }
}
