//! Markov-condition diagnostic.
//!
//! If drift and volatility depend only on (t, x(t)), then inside a
//! (t, x-bin) cell the law of Δx cannot depend on the path's past. The
//! strongest practically detectable violation is one-step dependence, so
//! the diagnostic splits each cell's increments by the sign of the
//! previous increment and compares the two sub-groups' means and variances
//! with two-sample z statistics. The verdict applies a Bonferroni
//! correction at the 4-sigma family level.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid_noise::{NoiseStream, TimeGrid};
use crate::kahan::KahanSum;
use crate::stream::{self, EnsembleReplay, PathSource};
use crate::walker::Ensemble;

use super::decomposition::{bin_of, StepSelection};

/// Minimum paths for the diagnostic to say anything at all.
pub const MIN_PATHS: usize = 10_000;
/// Minimum occupancy per sub-group for a cell to be testable.
pub const MIN_GROUP: u64 = 30;
/// Family-wise significance: the two-sided 4-sigma tail.
pub fn family_alpha() -> f64 {
    erfc(4.0 / std::f64::consts::SQRT_2)
}

const MAX_PARTIALS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkovVerdict {
    /// No cell exceeds the corrected threshold.
    Consistent,
    /// At least one cell shows past-dependence beyond the threshold.
    NonMarkov,
    /// Too little occupancy to test anything; distinct from a failure.
    Undetermined,
}

/// Two-sample comparison for one (t, x-bin) cell.
#[derive(Debug, Clone, Copy)]
pub struct MarkovCellStat {
    pub grid_step: usize,
    pub bin: usize,
    pub n_down: u64,
    pub n_up: u64,
    /// z statistic for the difference of conditional means of Δx.
    pub z_mean: f64,
    /// z statistic for the difference of conditional variances of Δx.
    pub z_var: f64,
    /// Two-sided p-value of the larger |z|.
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct MarkovReport {
    pub verdict: MarkovVerdict,
    pub n_paths: usize,
    pub cells_tested: usize,
    /// Total number of z tests (two per tested cell).
    pub tests: usize,
    pub family_alpha: f64,
    /// Bonferroni-corrected per-test threshold.
    pub per_test_alpha: f64,
    /// The cell with the largest |z|, when any cell was testable.
    pub worst: Option<MarkovCellStat>,
    /// Cells beyond the corrected threshold.
    pub flagged: Vec<MarkovCellStat>,
}

#[derive(Clone)]
pub(crate) struct GroupMoments {
    count: u64,
    p1: KahanSum,
    p2: KahanSum,
    p3: KahanSum,
    p4: KahanSum,
}

impl GroupMoments {
    pub(crate) fn new() -> Self {
        Self {
            count: 0,
            p1: KahanSum::new(),
            p2: KahanSum::new(),
            p3: KahanSum::new(),
            p4: KahanSum::new(),
        }
    }

    pub(crate) fn add(&mut self, d: f64) {
        self.count += 1;
        let d2 = d * d;
        self.p1.add(d);
        self.p2.add(d2);
        self.p3.add(d2 * d);
        self.p4.add(d2 * d2);
    }

    fn merge(&mut self, other: &GroupMoments) {
        self.count += other.count;
        self.p1.merge(other.p1);
        self.p2.merge(other.p2);
        self.p3.merge(other.p3);
        self.p4.merge(other.p4);
    }

    /// (mean, variance, central fourth moment).
    fn central(&self) -> (f64, f64, f64) {
        let n = self.count as f64;
        let m = self.p1.value() / n;
        let r2 = self.p2.value() / n;
        let r3 = self.p3.value() / n;
        let r4 = self.p4.value() / n;
        let v = (r2 - m * m).max(0.0);
        let m4 = (r4 - 4.0 * m * r3 + 6.0 * m * m * r2 - 3.0 * m * m * m * m).max(0.0);
        (m, v, m4)
    }
}

fn two_sample_z(a: &GroupMoments, b: &GroupMoments) -> (f64, f64) {
    let (ma, va, m4a) = a.central();
    let (mb, vb, m4b) = b.central();
    let na = a.count as f64;
    let nb = b.count as f64;

    let se_mean = (va / na + vb / nb).sqrt();
    let dm = ma - mb;
    let z_mean = if se_mean > 0.0 {
        dm / se_mean
    } else if dm == 0.0 {
        0.0
    } else {
        f64::INFINITY * dm.signum()
    };

    // Delta-method standard error for the variance difference; the fourth
    // central moments keep the test calibrated for two-point (±1-driven)
    // increment distributions.
    let se_var = (((m4a - va * va).max(0.0)) / na + ((m4b - vb * vb).max(0.0)) / nb).sqrt();
    let dv = va - vb;
    let z_var = if se_var > 0.0 {
        dv / se_var
    } else if dv.abs() <= 1e-12 * (va + vb).max(f64::MIN_POSITIVE) {
        0.0
    } else {
        f64::INFINITY * dv.signum()
    };

    (z_mean, z_var)
}

fn two_sided_p(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        erfc(z.abs() / std::f64::consts::SQRT_2)
    }
}

/// Streamed diagnostic over a path source. Every selected step must be at
/// least 1 so that the previous increment exists.
pub fn markov_diagnostic_scanned<S: PathSource + ?Sized>(
    source: &S,
    steps: &StepSelection,
    n_xbins: usize,
) -> Result<MarkovReport> {
    if n_xbins == 0 {
        return Err(Error::InvalidConfig("n_xbins must be at least 1".into()));
    }
    if steps.indices().iter().any(|&k| k == 0) {
        return Err(Error::InvalidConfig(
            "markov diagnostic needs steps with a previous increment (k >= 1)".into(),
        ));
    }
    let n_paths = source.n_paths();
    if n_paths < MIN_PATHS {
        // Skip the scan entirely; the verdict is undetermined regardless.
        return Ok(markov_from_groups(n_paths, &[], n_xbins, Vec::new()));
    }

    let indices = steps.indices();
    let n_cells = indices.len() * n_xbins;
    let width = stream::chunk_width(n_paths, MAX_PARTIALS);

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

    // Per cell: increment moments split by the previous increment's sign.
    let groups = stream::scan_merged(
        source,
        width,
        || vec![(GroupMoments::new(), GroupMoments::new()); n_cells],
        |cells: &mut Vec<(GroupMoments, GroupMoments)>, _pid, values| {
            for (j, &k) in indices.iter().enumerate() {
                let x = values[k];
                let dx = values[k + 1] - values[k];
                let prev = values[k] - values[k - 1];
                let (lo, hi) = ranges[j];
                let cell = &mut cells[j * n_xbins + bin_of(lo, hi, n_xbins, x)];
                if prev < 0.0 {
                    cell.0.add(dx);
                } else {
                    cell.1.add(dx);
                }
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(&part) {
                a.0.merge(&p.0);
                a.1.merge(&p.1);
            }
        },
    )?;

    Ok(markov_from_groups(n_paths, indices, n_xbins, groups))
}

/// Verdict assembly shared by the streamed and panel-based entry points.
/// `grid_steps` has one entry per analyzed step; `groups` is row-major
/// (step, bin) with (previous-down, previous-up) moment pairs.
pub(crate) fn markov_from_groups(
    n_paths: usize,
    grid_steps: &[usize],
    n_xbins: usize,
    groups: Vec<(GroupMoments, GroupMoments)>,
) -> MarkovReport {
    let undetermined = MarkovReport {
        verdict: MarkovVerdict::Undetermined,
        n_paths,
        cells_tested: 0,
        tests: 0,
        family_alpha: family_alpha(),
        per_test_alpha: f64::NAN,
        worst: None,
        flagged: Vec::new(),
    };
    if n_paths < MIN_PATHS {
        return undetermined;
    }

    let mut tested = 0usize;
    let mut stats: Vec<MarkovCellStat> = Vec::new();
    for (idx, (down, up)) in groups.iter().enumerate() {
        if down.count < MIN_GROUP || up.count < MIN_GROUP {
            continue;
        }
        tested += 1;
        let (z_mean, z_var) = two_sample_z(down, up);
        let p = two_sided_p(z_mean).min(two_sided_p(z_var));
        stats.push(MarkovCellStat {
            grid_step: grid_steps[idx / n_xbins],
            bin: idx % n_xbins,
            n_down: down.count,
            n_up: up.count,
            z_mean,
            z_var,
            p_value: p,
        });
    }

    if tested == 0 {
        return undetermined;
    }

    let tests = 2 * tested;
    let per_test_alpha = family_alpha() / tests as f64;
    let flagged: Vec<MarkovCellStat> = stats
        .iter()
        .copied()
        .filter(|s| two_sided_p(s.z_mean) <= per_test_alpha || two_sided_p(s.z_var) <= per_test_alpha)
        .collect();
    let worst = stats.iter().copied().max_by(|a, b| {
        let za = a.z_mean.abs().max(a.z_var.abs());
        let zb = b.z_mean.abs().max(b.z_var.abs());
        za.total_cmp(&zb)
    });

    MarkovReport {
        verdict: if flagged.is_empty() {
            MarkovVerdict::Consistent
        } else {
            MarkovVerdict::NonMarkov
        },
        n_paths,
        cells_tested: tested,
        tests,
        family_alpha: family_alpha(),
        per_test_alpha,
        worst,
        flagged,
    }
}

/// In-memory diagnostic over a dense ensemble, testing every step k ≥ 1.
pub fn markov_diagnostic(ensemble: &Ensemble, n_xbins: usize) -> Result<MarkovReport> {
    if !ensemble.is_dense() {
        return Err(Error::Resolution(format!(
            "markov diagnostic needs every increment; ensemble is thinned with stride {}",
            ensemble.stride()
        )));
    }
    let grid = ensemble.grid();
    if grid.n_steps() < 2 {
        return Err(Error::InvalidConfig(
            "markov diagnostic needs at least 2 steps".into(),
        ));
    }
    let steps = StepSelection::from_indices(grid, (1..grid.n_steps()).collect())?;
    markov_diagnostic_scanned(&EnsembleReplay::new(ensemble), &steps, n_xbins)
}

/// A deliberately non-Markov walk: volatility jumps by `kick` after every
/// up-step, so σ depends on the previous increment rather than on (t, x).
/// Used to calibrate the diagnostic's detection power.
#[derive(Debug, Clone)]
pub struct SignCoupledWalk {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub base_sigma: f64,
    pub kick: f64,
}

impl PathSource for SignCoupledWalk {
    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn fill_path(&self, path_id: u64, out: &mut Vec<f64>) -> Result<()> {
        let noise = NoiseStream::new(self.seed, path_id);
        let n = self.grid.n_steps();
        let sdt = self.grid.dt().sqrt();
        out.clear();
        out.reserve(n + 1);
        let mut x = 0.0;
        out.push(x);
        let mut prev_up = false;
        for k in 0..n {
            let sigma = if prev_up {
                self.base_sigma * (1.0 + self.kick)
            } else {
                self.base_sigma
            };
            let eps = noise.sign_at(k as u64);
            x += sigma * eps * sdt;
            out.push(x);
            prev_up = eps > 0.0;
        }
        Ok(())
    }
}
