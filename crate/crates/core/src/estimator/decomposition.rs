//! Binned conditional-moment recovery of the walk decomposition
//! x(t+δt) = x(t) + b̂·δt + ŝ·η̂·√δt.
//!
//! The conditional expectation given the past is estimated by binning on
//! (t, x): at each analyzed step, equal-width x-bins span the ensemble
//! range at that time. Within a bin, b̂ = mean(Δx)/δt and
//! ŝ = √(mean((Δx − b̂·δt)²)/δt) with the 1/n normalization; bins under the
//! occupancy floor are reported undetermined, never extrapolated.
//!
//! Estimation runs in three streaming passes (ranges, moments, residuals)
//! over a [`PathSource`], so ensembles far larger than memory are fine;
//! the in-memory operation replays the ensemble through the same passes.

use crate::error::{Error, Result};
use crate::grid_noise::TimeGrid;
use crate::kahan::KahanSum;
use crate::stream::{self, EnsembleReplay, PathSource};
use crate::walker::Ensemble;

/// At most this many chunk partials are alive during a scan; each partial
/// carries per-cell accumulators, so the cap bounds transient memory.
const MAX_PARTIALS: usize = 16;

/// Which step indices of the grid to analyze. Step k covers the increment
/// from t_k to t_{k+1}.
#[derive(Debug, Clone)]
pub struct StepSelection {
    indices: Vec<usize>,
}

impl StepSelection {
    /// Every step of the grid.
    pub fn all(grid: &TimeGrid) -> Self {
        Self {
            indices: (0..grid.n_steps()).collect(),
        }
    }

    /// Evenly strided subset with at most `max_steps` entries.
    pub fn strided(grid: &TimeGrid, max_steps: usize) -> Self {
        let n = grid.n_steps();
        let max_steps = max_steps.max(1);
        let stride = n.div_ceil(max_steps);
        Self {
            indices: (0..n).step_by(stride).collect(),
        }
    }

    pub fn from_indices(grid: &TimeGrid, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidConfig("step selection is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= grid.n_steps()) {
            return Err(Error::InvalidConfig(format!(
                "step index {bad} out of range 0..{}",
                grid.n_steps()
            )));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[inline]
pub(crate) fn bin_of(lo: f64, hi: f64, n_xbins: usize, x: f64) -> usize {
    if hi > lo {
        let f = (x - lo) / (hi - lo);
        ((f * n_xbins as f64) as usize).min(n_xbins - 1)
    } else {
        0
    }
}

/// Estimates for one (time, x-bin) cell.
#[derive(Debug, Clone, Copy)]
pub struct CellEstimate {
    pub count: u64,
    /// b̂, the binned estimate of the forward drift.
    pub drift: f64,
    /// ŝ, the binned estimate of the volatility.
    pub volatility: f64,
    /// Sample mean of the standardized residual η̂.
    pub mean_eta: f64,
    /// Sample mean of η̂².
    pub mean_eta_sq: f64,
    /// Occupancy reached the floor; only determined cells carry estimates.
    pub determined: bool,
}

impl CellEstimate {
    pub(crate) fn undetermined(count: u64) -> Self {
        Self {
            count,
            drift: f64::NAN,
            volatility: f64::NAN,
            mean_eta: f64::NAN,
            mean_eta_sq: f64::NAN,
            determined: false,
        }
    }

    /// 4-sigma bound for |mean η̂| at this occupancy.
    pub fn eta_mean_bound(&self) -> f64 {
        4.0 / (self.count as f64).sqrt()
    }

    /// 8-sigma-scale bound for |mean η̂² − 1| at this occupancy.
    pub fn eta_sq_bound(&self) -> f64 {
        8.0 / (self.count as f64).sqrt()
    }

    /// Residual moments are inside the statistical bounds.
    pub fn residuals_within_bounds(&self) -> bool {
        self.mean_eta.abs() <= self.eta_mean_bound()
            && (self.mean_eta_sq - 1.0).abs() <= self.eta_sq_bound()
    }
}

/// The binned decomposition over the analyzed steps.
#[derive(Debug, Clone)]
pub struct DecompositionEstimate {
    grid: TimeGrid,
    n_xbins: usize,
    min_count: usize,
    steps: Vec<usize>,
    /// Per analyzed step, the x-range the bins span.
    ranges: Vec<(f64, f64)>,
    /// Row-major cells: `steps.len() × n_xbins`.
    cells: Vec<CellEstimate>,
}

impl DecompositionEstimate {
    pub(crate) fn from_parts(
        grid: TimeGrid,
        n_xbins: usize,
        min_count: usize,
        steps: Vec<usize>,
        ranges: Vec<(f64, f64)>,
        cells: Vec<CellEstimate>,
    ) -> Self {
        Self {
            grid,
            n_xbins,
            min_count,
            steps,
            ranges,
            cells,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_xbins(&self) -> usize {
        self.n_xbins
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// The analyzed step indices.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Time at the j-th analyzed step.
    pub fn time(&self, j: usize) -> f64 {
        self.grid.t(self.steps[j])
    }

    pub fn range(&self, j: usize) -> (f64, f64) {
        self.ranges[j]
    }

    pub fn cell(&self, j: usize, bin: usize) -> &CellEstimate {
        &self.cells[j * self.n_xbins + bin]
    }

    /// Midpoint of bin `bin` at analyzed step `j`.
    pub fn bin_center(&self, j: usize, bin: usize) -> f64 {
        let (lo, hi) = self.ranges[j];
        if hi > lo {
            lo + (bin as f64 + 0.5) * (hi - lo) / self.n_xbins as f64
        } else {
            lo
        }
    }

    /// Iterates (analyzed step, bin, cell) over determined cells.
    pub fn determined_cells(&self) -> impl Iterator<Item = (usize, usize, &CellEstimate)> {
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c.determined
                .then_some((i / self.n_xbins, i % self.n_xbins, c))
        })
    }

    pub fn n_determined(&self) -> usize {
        self.cells.iter().filter(|c| c.determined).count()
    }

    /// Determined cells whose volatility estimate is not strictly positive
    /// (degenerate inputs such as replicated deterministic paths).
    pub fn degenerate_cells(&self) -> Vec<(usize, usize)> {
        self.determined_cells()
            .filter(|(_, _, c)| !(c.volatility > 0.0))
            .map(|(j, b, _)| (j, b))
            .collect()
    }

    /// Count-weighted least-squares slope and intercept of b̂ against the
    /// bin centers, pooled over every determined cell.
    pub fn drift_slope_vs_center(&self) -> Option<(f64, f64)> {
        let mut sw = KahanSum::new();
        let mut sx = KahanSum::new();
        let mut sy = KahanSum::new();
        let mut sxx = KahanSum::new();
        let mut sxy = KahanSum::new();
        for (j, b, c) in self.determined_cells() {
            if !(c.volatility > 0.0) {
                continue;
            }
            let w = c.count as f64;
            let x = self.bin_center(j, b);
            sw.add(w);
            sx.add(w * x);
            sy.add(w * c.drift);
            sxx.add(w * x * x);
            sxy.add(w * x * c.drift);
        }
        let (sw, sx, sy, sxx, sxy) = (sw.value(), sx.value(), sy.value(), sxx.value(), sxy.value());
        let denom = sw * sxx - sx * sx;
        if !(denom.abs() > 0.0) || sw == 0.0 {
            return None;
        }
        let slope = (sw * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / sw;
        Some((slope, intercept))
    }
}

struct MomentCell {
    count: u64,
    sum_dx: KahanSum,
    sum_dx2: KahanSum,
}

impl MomentCell {
    fn new() -> Self {
        Self {
            count: 0,
            sum_dx: KahanSum::new(),
            sum_dx2: KahanSum::new(),
        }
    }
}

struct ResidualCell {
    sum_eta: KahanSum,
    sum_eta2: KahanSum,
}

/// Three-pass streaming estimation over any path source.
pub fn estimate_decomposition_scanned<S: PathSource + ?Sized>(
    source: &S,
    steps: &StepSelection,
    n_xbins: usize,
    min_count: usize,
) -> Result<DecompositionEstimate> {
    if n_xbins == 0 {
        return Err(Error::InvalidConfig("n_xbins must be at least 1".into()));
    }
    if min_count < 30 {
        return Err(Error::InvalidConfig(format!(
            "min_count must be at least 30, got {min_count}"
        )));
    }
    let n_paths = source.n_paths();
    if n_paths < 2 {
        return Err(Error::InsufficientData(format!(
            "decomposition needs at least 2 paths, got {n_paths}"
        )));
    }
    let grid = source.grid();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let indices = steps.indices();
    let n_cells = indices.len() * n_xbins;
    let width = stream::chunk_width(n_paths, MAX_PARTIALS);

    // Pass 1: per-step x-range across the ensemble.
    let ranges = stream::scan_merged(
        source,
        width,
        || (vec![f64::INFINITY; indices.len()], vec![f64::NEG_INFINITY; indices.len()]),
        |(lo, hi), _pid, values| {
            for (j, &k) in indices.iter().enumerate() {
                let x = values[k];
                if x < lo[j] {
                    lo[j] = x;
                }
                if x > hi[j] {
                    hi[j] = x;
                }
            }
        },
        |(alo, ahi), (blo, bhi)| {
            for j in 0..alo.len() {
                alo[j] = alo[j].min(blo[j]);
                ahi[j] = ahi[j].max(bhi[j]);
            }
        },
    )?;
    let ranges: Vec<(f64, f64)> = ranges.0.into_iter().zip(ranges.1).collect();

    // Pass 2: per-cell increment moments.
    let moments = stream::scan_merged(
        source,
        width,
        || (0..n_cells).map(|_| MomentCell::new()).collect::<Vec<_>>(),
        |cells, _pid, values| {
            for (j, &k) in indices.iter().enumerate() {
                let x = values[k];
                let dx = values[k + 1] - values[k];
                let (lo, hi) = ranges[j];
                let cell = &mut cells[j * n_xbins + bin_of(lo, hi, n_xbins, x)];
                cell.count += 1;
                cell.sum_dx.add(dx);
                cell.sum_dx2.add(dx * dx);
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.count += p.count;
                a.sum_dx.merge(p.sum_dx);
                a.sum_dx2.merge(p.sum_dx2);
            }
        },
    )?;

    let mut cells: Vec<CellEstimate> = moments
        .iter()
        .map(|m| {
            if (m.count as usize) < min_count {
                return CellEstimate::undetermined(m.count);
            }
            let n = m.count as f64;
            let mean_dx = m.sum_dx.value() / n;
            let mean_dx2 = m.sum_dx2.value() / n;
            let variance = (mean_dx2 - mean_dx * mean_dx).max(0.0);
            CellEstimate {
                count: m.count,
                drift: mean_dx / dt,
                volatility: (variance / dt).sqrt(),
                mean_eta: f64::NAN,
                mean_eta_sq: f64::NAN,
                determined: true,
            }
        })
        .collect();

    // Pass 3: standardized residual moments per cell, using the cell's own
    // (b̂, ŝ). Cells with ŝ = 0 stay flagged and get no residuals.
    let b_dt: Vec<f64> = cells.iter().map(|c| c.drift * dt).collect();
    let s_sdt: Vec<f64> = cells.iter().map(|c| c.volatility * sdt).collect();
    let residuals = stream::scan_merged(
        source,
        width,
        || {
            (0..n_cells)
                .map(|_| ResidualCell {
                    sum_eta: KahanSum::new(),
                    sum_eta2: KahanSum::new(),
                })
                .collect::<Vec<_>>()
        },
        |cells_p, _pid, values| {
            for (j, &k) in indices.iter().enumerate() {
                let x = values[k];
                let dx = values[k + 1] - values[k];
                let (lo, hi) = ranges[j];
                let idx = j * n_xbins + bin_of(lo, hi, n_xbins, x);
                let scale = s_sdt[idx];
                if scale > 0.0 {
                    let eta = (dx - b_dt[idx]) / scale;
                    cells_p[idx].sum_eta.add(eta);
                    cells_p[idx].sum_eta2.add(eta * eta);
                }
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.sum_eta.merge(p.sum_eta);
                a.sum_eta2.merge(p.sum_eta2);
            }
        },
    )?;

    for (cell, res) in cells.iter_mut().zip(&residuals) {
        if cell.determined && cell.volatility > 0.0 {
            let n = cell.count as f64;
            cell.mean_eta = res.sum_eta.value() / n;
            cell.mean_eta_sq = res.sum_eta2.value() / n;
        }
    }

    Ok(DecompositionEstimate {
        grid,
        n_xbins,
        min_count,
        steps: indices.to_vec(),
        ranges,
        cells,
    })
}

/// In-memory decomposition of a dense ensemble over every time step.
pub fn estimate_decomposition(
    ensemble: &Ensemble,
    n_xbins: usize,
    min_count: usize,
) -> Result<DecompositionEstimate> {
    if !ensemble.is_dense() {
        return Err(Error::Resolution(format!(
            "decomposition needs every increment; ensemble is thinned with stride {}",
            ensemble.stride()
        )));
    }
    let steps = StepSelection::all(ensemble.grid());
    estimate_decomposition_scanned(&EnsembleReplay::new(ensemble), &steps, n_xbins, min_count)
}

/// Per-bin residual moments of a decomposition estimate.
#[derive(Debug, Clone, Copy)]
pub struct ResidualMoments {
    /// Position in the analyzed-step list.
    pub step: usize,
    /// Grid step index.
    pub grid_step: usize,
    pub bin: usize,
    pub count: u64,
    pub mean_eta: f64,
    pub mean_eta_sq: f64,
    pub within_bounds: bool,
}

/// Extracts (mean η̂, mean η̂², count) for every determined bin, flagging
/// bins whose moments violate the statistical bounds.
pub fn residual_moments(estimate: &DecompositionEstimate) -> Result<Vec<ResidualMoments>> {
    let out: Vec<ResidualMoments> = estimate
        .determined_cells()
        .filter(|(_, _, c)| c.volatility > 0.0)
        .map(|(j, b, c)| ResidualMoments {
            step: j,
            grid_step: estimate.steps()[j],
            bin: b,
            count: c.count,
            mean_eta: c.mean_eta,
            mean_eta_sq: c.mean_eta_sq,
            within_bounds: c.residuals_within_bounds(),
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "no determined bins in the decomposition estimate".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_noise::TimeGrid;
    use crate::walker::{
        builtin_field, simulate_ensemble, simulate_ensemble_thinned, CoefficientField, Ensemble,
        InitialCondition, Path, PhysicalScale,
    };

    #[test]
    fn constant_field_recovery_matches_variance_expansion_oracle() {
        // For constant (b₀, σ₀) the bin moments obey an exact algebraic
        // identity: with ε̄ = (b̂ − b₀)·√dt/σ₀, ŝ² = σ₀²·(1 − ε̄²).
        let grid = TimeGrid::new(200, 1.0).unwrap();
        let field = CoefficientField::constant(2.0, 1.0);
        let n_paths = 5000;
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, n_paths, 31).unwrap();
        let est = estimate_decomposition(&ens, 8, 100).unwrap();
        assert!(est.n_determined() > 0);
        let dt = grid.dt();
        for (_, _, cell) in est.determined_cells() {
            let n = cell.count as f64;
            // CLT bound on b̂: sd = σ₀/√(n·dt), 4-sigma.
            assert!(
                (cell.drift - 2.0).abs() <= 4.0 / (n * dt).sqrt(),
                "drift {} at count {}",
                cell.drift,
                cell.count
            );
            let eps_bar = (cell.drift - 2.0) * dt.sqrt();
            let expect_s2 = 1.0 - eps_bar * eps_bar;
            assert!(
                (cell.volatility * cell.volatility - expect_s2).abs() <= 1e-10,
                "ŝ² {} vs oracle {}",
                cell.volatility * cell.volatility,
                expect_s2
            );
        }
    }

    #[test]
    fn ou_drift_slope_recovers_minus_omega() {
        // Linear-drift recovery oracle: binned b̂ regressed on bin centers
        // has slope −ω by construction of the field.
        let grid = TimeGrid::new(500, 2.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(1.0)).unwrap();
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 10_000, 77).unwrap();
        let est = estimate_decomposition(&ens, 16, 200).unwrap();
        let (slope, _) = est.drift_slope_vs_center().unwrap();
        assert!((slope + 1.0).abs() <= 0.05, "slope {slope}");
    }

    #[test]
    fn replicated_deterministic_path_is_flagged_degenerate() {
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = CoefficientField::constant(1.0, 1.0);
        let paths: Vec<Path> = (0..50)
            .map(|i| Path::from_fn(grid, i, |t| t).unwrap())
            .collect();
        let ens = Ensemble::from_paths(grid, field, 0, paths).unwrap();
        let est = estimate_decomposition(&ens, 4, 30).unwrap();
        assert!(est.n_determined() > 0);
        let degenerate = est.degenerate_cells();
        assert_eq!(degenerate.len(), est.n_determined());
        // Degenerate bins carry no residual moments.
        assert!(residual_moments(&est).is_err());
    }

    #[test]
    fn single_path_is_insufficient() {
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 1, 3).unwrap();
        assert!(matches!(
            estimate_decomposition(&ens, 4, 30),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn thinned_ensemble_is_refused() {
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let ens =
            simulate_ensemble_thinned(&field, InitialCondition::Point(0.0), &grid, 8, 3, 2).unwrap();
        assert!(matches!(
            estimate_decomposition(&ens, 4, 30),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn residual_moments_are_centered_and_standardized() {
        let grid = TimeGrid::new(128, 1.0).unwrap();
        let field = CoefficientField::constant(0.5, 2.0);
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 2000, 5).unwrap();
        let est = estimate_decomposition(&ens, 6, 50).unwrap();
        let moments = residual_moments(&est).unwrap();
        assert!(!moments.is_empty());
        for m in &moments {
            // Within-bin standardization: the sample moments match the
            // definition to floating-point accuracy.
            assert!(m.mean_eta.abs() <= 1e-10, "mean η̂ {}", m.mean_eta);
            assert!((m.mean_eta_sq - 1.0).abs() <= 1e-10, "mean η̂² {}", m.mean_eta_sq);
            assert!(m.within_bounds);
        }
    }

    #[test]
    fn small_bin_of_fair_signs_respects_binomial_bound() {
        // Standardizing 30 fair ±1 draws with the true coefficients keeps
        // |mean η̂| within 4/√30 ≈ 0.73 at 4-sigma confidence.
        let grid = TimeGrid::new(30, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 2, 9).unwrap();
        let path = &ens.paths()[0];
        let dt = grid.dt();
        let mut mean = 0.0;
        for w in path.values().windows(2) {
            mean += (w[1] - w[0]) / dt.sqrt();
        }
        mean /= 30.0;
        assert!(mean.abs() <= 4.0 / 30f64.sqrt());
    }

    #[test]
    fn scanned_and_in_memory_estimates_are_bitwise_identical() {
        let grid = TimeGrid::new(100, 1.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(0.5)).unwrap();
        let x0 = InitialCondition::Gaussian { mean: 0.0, std: 1.0 };
        let ens = simulate_ensemble(&field, x0, &grid, 3000, 13).unwrap();
        let in_memory = estimate_decomposition(&ens, 8, 40).unwrap();
        let source = crate::walker::RademacherWalk::new(field, x0, grid, 3000, 13).unwrap();
        let scanned =
            estimate_decomposition_scanned(&source, &StepSelection::all(&grid), 8, 40).unwrap();
        for (a, b) in in_memory.cells.iter().zip(&scanned.cells) {
            assert_eq!(a.count, b.count);
            assert!(a.drift == b.drift || (a.drift.is_nan() && b.drift.is_nan()));
            assert!(
                a.volatility == b.volatility || (a.volatility.is_nan() && b.volatility.is_nan())
            );
        }
    }

    #[test]
    fn strided_selection_covers_the_grid_evenly() {
        let grid = TimeGrid::new(1000, 1.0).unwrap();
        let sel = StepSelection::strided(&grid, 64);
        assert!(sel.len() <= 64);
        assert_eq!(sel.indices()[0], 0);
        assert!(*sel.indices().last().unwrap() < 1000);
        let all = StepSelection::all(&grid);
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn parameter_validation() {
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 4, 3).unwrap();
        assert!(estimate_decomposition(&ens, 0, 30).is_err());
        assert!(estimate_decomposition(&ens, 4, 29).is_err());
    }
}
