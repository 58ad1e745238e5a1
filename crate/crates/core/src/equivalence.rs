//! Distributional equivalence of the ±1-driven walk with its limiting
//! diffusion, and the coupled-walk stability check.
//!
//! The reference solver integrates dx = b·dt + σ·dW with the same explicit
//! left-point scheme as the walk, so both share the discretization bias
//! and the comparison isolates the ±1-versus-Gaussian difference. The
//! equivalence verdict compares one-time marginals (KS and W₁); path-space
//! laws are out of scope.

use rand::prelude::Distribution;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid_noise::{CounterRng, NoiseDomain, NoiseStream, TimeGrid};
use crate::kahan::KahanSum;
use crate::stream::{self, PathSource};
use crate::walker::{CoefficientField, Ensemble, InitialCondition};

/// The shadow diffusion as a path source: standard normal increments in
/// place of the ±1 signs, same grid, same left-point evaluation, same
/// determinism contract.
#[derive(Debug, Clone)]
pub struct GaussianWalk {
    pub field: CoefficientField,
    pub x0: InitialCondition,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

impl GaussianWalk {
    pub fn new(
        field: CoefficientField,
        x0: InitialCondition,
        grid: TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        x0.validate()?;
        Ok(Self {
            field,
            x0,
            grid,
            n_paths,
            seed,
        })
    }
}

impl PathSource for GaussianWalk {
    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn fill_path(&self, path_id: u64, out: &mut Vec<f64>) -> Result<()> {
        let x0 = self.x0.sample(self.seed, path_id);
        if !x0.is_finite() {
            return Err(Error::InvalidConfig(format!("x0 must be finite, got {x0}")));
        }
        let mut rng = CounterRng::new(self.seed, path_id, NoiseDomain::Gaussian);
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let sdt = dt.sqrt();
        out.clear();
        out.reserve(n + 1);
        out.push(x0);
        // Constant coefficients are validated once; the step expression is
        // unchanged, so values are bitwise identical to the generic loop.
        if let (Ok(b), Ok(s), true) = (
            self.field.drift_at(0.0, x0),
            self.field.vol_at(0.0, x0),
            matches!(self.field.kind(), crate::walker::FieldKind::Constant),
        ) {
            let b_dt = b * dt;
            let mut x = x0;
            for k in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = x + b_dt + s * z * sdt;
                if !x.is_finite() {
                    return Err(Error::NumericDomain { what: "state", t: self.grid.t(k), x }
                        .at_step(k));
                }
                out.push(x);
            }
            return Ok(());
        }
        let mut x = x0;
        for k in 0..n {
            let t = self.grid.t(k);
            let b = self.field.drift_at(t, x).map_err(|e| e.at_step(k))?;
            let s = self.field.vol_at(t, x).map_err(|e| e.at_step(k))?;
            let z: f64 = StandardNormal.sample(&mut rng);
            x = x + b * dt + s * z * sdt;
            if !x.is_finite() {
                return Err(Error::NumericDomain { what: "state", t, x }.at_step(k));
            }
            out.push(x);
        }
        Ok(())
    }
}

/// Simulates the Gaussian-increment reference ensemble.
pub fn gaussian_reference(
    field: &CoefficientField,
    x0: InitialCondition,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    let source = GaussianWalk::new(field.clone(), x0, *grid, n_paths, seed)?;
    let paths = stream::materialize(&source, 1)?;
    Ensemble::from_paths(*grid, field.clone(), seed, paths)
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic: the supremum over all pooled
/// points of |F̂_a − F̂_b|.
pub fn ks_distance(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::InsufficientData("ks_distance needs non-empty samples".into()));
    }
    let a = sorted_copy(samples_a);
    let b = sorted_copy(samples_b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut stat = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / na - j as f64 / nb).abs();
        if diff > stat {
            stat = diff;
        }
    }
    Ok(stat)
}

/// Empirical 1-Wasserstein distance.
///
/// Equal sizes: the mean absolute difference of the sorted samples (the
/// exact empirical W₁). Unequal sizes: both samples are resampled to the
/// smaller size by reading their empirical quantile functions at the
/// midpoints (i + ½)/m before pairing.
pub fn wasserstein1(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::InsufficientData("wasserstein1 needs non-empty samples".into()));
    }
    let a = sorted_copy(samples_a);
    let b = sorted_copy(samples_b);
    let quantile = |s: &[f64], q: f64| -> f64 {
        let idx = ((q * s.len() as f64) as usize).min(s.len() - 1);
        s[idx]
    };
    let m = a.len().min(b.len());
    let mut acc = KahanSum::new();
    if a.len() == b.len() {
        for (x, y) in a.iter().zip(&b) {
            acc.add((x - y).abs());
        }
    } else {
        for i in 0..m {
            let q = (i as f64 + 0.5) / m as f64;
            acc.add((quantile(&a, q) - quantile(&b, q)).abs());
        }
    }
    Ok(acc.value() / m as f64)
}

/// Default KS pass threshold for two samples of sizes (n_a, n_b) compared
/// at a time reached in `steps_to_t` walk steps: the asymptotic 99%
/// two-sample quantile plus an allowance for the ±1 walk's value lattice
/// (the marginal is supported on a lattice of pitch 2σ√δt, whose CDF
/// staircase deviates from the smooth law by about 1/√(2π·m) at m steps).
pub fn ks_default_threshold(n_a: usize, n_b: usize, steps_to_t: usize) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let quantile_99 = 1.628 * ((na + nb) / (na * nb)).sqrt();
    let lattice = 1.0 / (2.0 * std::f64::consts::PI * steps_to_t.max(1) as f64).sqrt();
    quantile_99 + lattice
}

/// Marginal comparison of two ensembles at the requested times.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub ks: Vec<f64>,
    pub wasserstein: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub ks_threshold: f64,
    /// Per-time verdict: KS within threshold.
    pub verdicts: Vec<bool>,
    pub pass: bool,
}

/// Compares one-time marginals of a walk against a reference ensemble.
pub fn equivalence_report(
    walk: &Ensemble,
    reference: &Ensemble,
    times: &[f64],
    ks_threshold: f64,
) -> Result<ComparisonReport> {
    let ha = walk.grid().horizon();
    let hb = reference.grid().horizon();
    if (ha - hb).abs() > 1e-12 * ha.max(hb) {
        return Err(Error::HorizonMismatch { a: ha, b: hb });
    }
    if times.is_empty() {
        return Err(Error::InvalidConfig("no comparison times given".into()));
    }
    if !(ks_threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ks_threshold must be positive, got {ks_threshold}"
        )));
    }
    let mut ks = Vec::with_capacity(times.len());
    let mut w1 = Vec::with_capacity(times.len());
    for &t in times {
        let a = walk.marginal_at(t)?;
        let b = reference.marginal_at(t)?;
        ks.push(ks_distance(&a, &b)?);
        w1.push(wasserstein1(&a, &b)?);
    }
    let verdicts: Vec<bool> = ks.iter().map(|&d| d <= ks_threshold).collect();
    Ok(ComparisonReport {
        times: times.to_vec(),
        ks,
        wasserstein: w1,
        n_a: walk.n_paths(),
        n_b: reference.n_paths(),
        ks_threshold,
        verdicts: verdicts.clone(),
        pass: verdicts.iter().all(|&v| v),
    })
}

/// Marginal comparison from already-extracted samples (one vector per
/// time and side), for runs too large to materialize as ensembles.
pub fn equivalence_report_from_marginals(
    samples_a: &[Vec<f64>],
    samples_b: &[Vec<f64>],
    times: &[f64],
    ks_threshold: f64,
) -> Result<ComparisonReport> {
    if samples_a.len() != times.len() || samples_b.len() != times.len() {
        return Err(Error::InvalidConfig(
            "one sample vector per comparison time is required".into(),
        ));
    }
    if !(ks_threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ks_threshold must be positive, got {ks_threshold}"
        )));
    }
    let mut ks = Vec::with_capacity(times.len());
    let mut w1 = Vec::with_capacity(times.len());
    for (a, b) in samples_a.iter().zip(samples_b) {
        ks.push(ks_distance(a, b)?);
        w1.push(wasserstein1(a, b)?);
    }
    let verdicts: Vec<bool> = ks.iter().map(|&d| d <= ks_threshold).collect();
    Ok(ComparisonReport {
        times: times.to_vec(),
        ks,
        wasserstein: w1,
        n_a: samples_a.first().map_or(0, Vec::len),
        n_b: samples_b.first().map_or(0, Vec::len),
        ks_threshold,
        verdicts: verdicts.clone(),
        pass: verdicts.iter().all(|&v| v),
    })
}

/// Coupled-walk stability check against a discrete Gronwall bound.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// max over the grid of |x₁(t) − x₂(t)|.
    pub sup_gap: f64,
    /// Grid index where the sup is attained.
    pub sup_gap_step: usize,
    /// |x₁(0) − x₂(0)|.
    pub delta0: f64,
    /// Sup over visited states of |b₁ − b₂| at the same point.
    pub delta_b: f64,
    /// Sup over visited states of |σ₁ − σ₂| at the same point.
    pub delta_sigma: f64,
    pub lipschitz_declared: f64,
    /// Largest finite-difference slope of b₁ observed along the run.
    pub lipschitz_observed_drift: f64,
    /// Largest finite-difference slope of σ₁ observed along the run.
    pub lipschitz_observed_vol: f64,
    /// The probe saw a slope beyond the declared bound.
    pub lipschitz_exceeded: bool,
    /// Final value of the Gronwall recursion.
    pub gronwall_final: f64,
    /// Observed gap stayed at or below the bound at every step.
    pub pass: bool,
    /// First (step, gap, bound) violation if any.
    pub worst_violation: Option<(usize, f64, f64)>,
    /// |x₁(t_k) − x₂(t_k)| along the grid.
    pub gaps: Vec<f64>,
}

/// Runs two walks on the same ±1 stream and verifies that their gap stays
/// below the discrete Gronwall bound
/// bound_{k+1} = bound_k·(1 + L·δt + L·√δt) + δ_b·δt + δ_σ·√δt,
/// where L is the declared Lipschitz constant of the first field in x and
/// the δ's are the coefficient sup-differences measured along the run.
pub fn stability_check(
    field1: &CoefficientField,
    field2: &CoefficientField,
    x01: f64,
    x02: f64,
    grid: &TimeGrid,
    seed: u64,
    lipschitz_bound: f64,
) -> Result<StabilityReport> {
    if !(lipschitz_bound.is_finite() && lipschitz_bound >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lipschitz bound must be finite and nonnegative, got {lipschitz_bound}"
        )));
    }
    if !x01.is_finite() || !x02.is_finite() {
        return Err(Error::InvalidConfig("initial values must be finite".into()));
    }

    let noise = NoiseStream::new(seed, 0);
    let n = grid.n_steps();
    let dt = grid.dt();
    let sdt = dt.sqrt();

    let mut x1 = x01;
    let mut x2 = x02;
    let mut gaps = Vec::with_capacity(n + 1);
    gaps.push((x1 - x2).abs());
    let mut delta_b = 0.0f64;
    let mut delta_sigma = 0.0f64;
    let mut lip_b = 0.0f64;
    let mut lip_s = 0.0f64;
    let mut x_scale = x01.abs().max(x02.abs()).max(1.0);

    for k in 0..n {
        let t = grid.t(k);
        let b1 = field1.drift_at(t, x1).map_err(|e| e.at_step(k))?;
        let s1 = field1.vol_at(t, x1).map_err(|e| e.at_step(k))?;
        let b2 = field2.drift_at(t, x2).map_err(|e| e.at_step(k))?;
        let s2 = field2.vol_at(t, x2).map_err(|e| e.at_step(k))?;

        // Coefficient gaps measured at a common point (the second walk's
        // state), matching the Gronwall decomposition.
        let b1_at_x2 = field1.drift_at(t, x2).map_err(|e| e.at_step(k))?;
        let s1_at_x2 = field1.vol_at(t, x2).map_err(|e| e.at_step(k))?;
        delta_b = delta_b.max((b1_at_x2 - b2).abs());
        delta_sigma = delta_sigma.max((s1_at_x2 - s2).abs());

        // Finite-difference Lipschitz probe of the first field.
        let h = 1e-4 * (1.0 + x1.abs());
        if let (Ok(bp), Ok(sp)) = (field1.drift_at(t, x1 + h), field1.vol_at(t, x1 + h)) {
            lip_b = lip_b.max(((bp - b1) / h).abs());
            lip_s = lip_s.max(((sp - s1) / h).abs());
        }

        let eps = noise.sign_at(k as u64);
        x1 = x1 + b1 * dt + s1 * eps * sdt;
        x2 = x2 + b2 * dt + s2 * eps * sdt;
        if !x1.is_finite() || !x2.is_finite() {
            return Err(Error::NumericDomain { what: "state", t, x: x1 }.at_step(k));
        }
        x_scale = x_scale.max(x1.abs()).max(x2.abs());
        gaps.push((x1 - x2).abs());
    }

    let delta0 = gaps[0];
    let growth = 1.0 + lipschitz_bound * (dt + sdt);
    let mut bound = delta0;
    let mut pass = true;
    let mut worst = None;
    let mut sup_gap = delta0;
    let mut sup_gap_step = 0usize;
    for (k, &gap) in gaps.iter().enumerate() {
        if gap > sup_gap {
            sup_gap = gap;
            sup_gap_step = k;
        }
        // Both sides carry O(k·ε·|x|) accumulated rounding; a gap that
        // saturates the bound in exact arithmetic must not fail on it.
        let fp_slack = 8.0 * f64::EPSILON * (k as f64 + 1.0) * x_scale;
        if gap > bound + fp_slack && pass {
            pass = false;
            worst = Some((k, gap, bound));
        }
        bound = bound * growth + delta_b * dt + delta_sigma * sdt;
    }
    // The recursion above advances one step past the grid end; recompute
    // the final bound value for reporting.
    let mut gronwall_final = delta0;
    for _ in 0..n {
        gronwall_final = gronwall_final * growth + delta_b * dt + delta_sigma * sdt;
    }

    Ok(StabilityReport {
        sup_gap,
        sup_gap_step,
        delta0,
        delta_b,
        delta_sigma,
        lipschitz_declared: lipschitz_bound,
        lipschitz_observed_drift: lip_b,
        lipschitz_observed_vol: lip_s,
        // A probe that reads exactly the declared slope must not trip the
        // flag on finite-difference rounding.
        lipschitz_exceeded: {
            let ceiling = lipschitz_bound * (1.0 + 1e-9) + 1e-12;
            lip_b > ceiling || lip_s > ceiling
        },
        gronwall_final,
        pass,
        worst_violation: worst,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walker::{builtin_field, simulate_ensemble, PhysicalScale};

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = vec![0.3, -1.0, 2.5, 0.0];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ks_of_disjoint_singletons_is_one() {
        assert_eq!(ks_distance(&[0.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn ks_interleaved_quartets() {
        // Brute-force oracle over all pooled evaluation points gives 0.25.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.5, 2.5, 3.5, 4.5];
        assert_eq!(ks_distance(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn ks_matches_brute_force_on_random_inputs() {
        let brute = |a: &[f64], b: &[f64]| -> f64 {
            let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
            pool.sort_unstable_by(f64::total_cmp);
            pool.iter()
                .map(|&x| {
                    let fa = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
                    let fb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
                    (fa - fb).abs()
                })
                .fold(0.0, f64::max)
        };
        let stream = NoiseStream::new(50, 0);
        for trial in 0..20 {
            let a: Vec<f64> = (0..37).map(|k| stream.sign_at(trial * 100 + k) * (k as f64 * 0.1)).collect();
            let b: Vec<f64> = (0..23).map(|k| stream.sign_at(trial * 100 + 50 + k) + k as f64 * 0.05).collect();
            let fast = ks_distance(&a, &b).unwrap();
            let slow = brute(&a, &b);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn wasserstein_translation_and_identity() {
        assert_eq!(wasserstein1(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let a = [0.4, -0.2, 1.7];
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        // Sorted-coupling oracle: (|0−0| + |1−3|)/2 = 1.
        assert_eq!(wasserstein1(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn distances_reject_empty_input() {
        assert!(ks_distance(&[], &[1.0]).is_err());
        assert!(wasserstein1(&[1.0], &[]).is_err());
    }

    #[test]
    fn reference_final_variance_obeys_chi_square_bound() {
        // Variance-of-variance oracle: sample variance of n i.i.d. N(0,1)
        // values deviates by at most 4·√(2/n) at 4-sigma confidence.
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        let n_paths = 20_000;
        let ens = gaussian_reference(&field, InitialCondition::Point(0.0), &grid, n_paths, 5).unwrap();
        let finals: Vec<f64> = ens.paths().iter().map(|p| p.final_value()).collect();
        let mean: f64 = finals.iter().sum::<f64>() / n_paths as f64;
        let var: f64 = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_paths as f64;
        assert!((var - 1.0).abs() <= 4.0 * (2.0 / n_paths as f64).sqrt(), "var {var}");
    }

    #[test]
    fn reference_ou_reaches_stationary_variance() {
        let grid = TimeGrid::new(2000, 8.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(1.0)).unwrap();
        let n_paths = 10_000;
        let ens = gaussian_reference(&field, InitialCondition::Point(0.0), &grid, n_paths, 6).unwrap();
        let finals: Vec<f64> = ens.paths().iter().map(|p| p.final_value()).collect();
        let mean: f64 = finals.iter().sum::<f64>() / n_paths as f64;
        let var: f64 = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_paths as f64;
        assert!((var - 0.5).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn single_step_reference_is_one_explicit_step() {
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let field = CoefficientField::constant(0.25, 2.0);
        let ens = gaussian_reference(&field, InitialCondition::Point(1.0), &grid, 1, 9).unwrap();
        let mut rng = CounterRng::new(9, 0, NoiseDomain::Gaussian);
        let z: f64 = StandardNormal.sample(&mut rng);
        let expect = 1.0 + 0.25 * 1.0 + 2.0 * z * 1.0;
        assert_eq!(ens.paths()[0].values()[1], expect);
    }

    #[test]
    fn walk_against_itself_has_zero_distance() {
        let grid = TimeGrid::new(128, 1.0).unwrap();
        let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 500, 7).unwrap();
        let report = equivalence_report(&ens, &ens, &[0.5, 1.0], 0.05).unwrap();
        assert!(report.pass);
        assert!(report.ks.iter().all(|&d| d == 0.0));
        assert!(report.wasserstein.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn doubled_volatility_is_detected() {
        // Distribution-distance oracle: KS(N(0,1), N(0,4)) ≈ 0.1585, so
        // with 10⁴ samples a 0.15 threshold must reject.
        let grid = TimeGrid::new(256, 1.0).unwrap();
        let walk_field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        let wide_field = CoefficientField::constant(0.0, 2.0);
        let walk = simulate_ensemble(&walk_field, InitialCondition::Point(0.0), &grid, 10_000, 11).unwrap();
        let wide = gaussian_reference(&wide_field, InitialCondition::Point(0.0), &grid, 10_000, 12).unwrap();
        let report = equivalence_report(&walk, &wide, &[1.0], 0.15).unwrap();
        assert!(!report.pass);
        assert!(report.ks[0] > 0.15, "ks {}", report.ks[0]);
    }

    #[test]
    fn mismatched_horizons_and_outside_times_error() {
        let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        let a = simulate_ensemble(&field, InitialCondition::Point(0.0), &TimeGrid::new(32, 1.0).unwrap(), 10, 1).unwrap();
        let b = simulate_ensemble(&field, InitialCondition::Point(0.0), &TimeGrid::new(32, 2.0).unwrap(), 10, 2).unwrap();
        assert!(matches!(
            equivalence_report(&a, &b, &[0.5], 0.1),
            Err(Error::HorizonMismatch { .. })
        ));
        let c = simulate_ensemble(&field, InitialCondition::Point(0.0), &TimeGrid::new(32, 1.0).unwrap(), 10, 3).unwrap();
        assert!(matches!(
            equivalence_report(&a, &c, &[1.5], 0.1),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn identical_coupled_walks_have_zero_gap() {
        let grid = TimeGrid::new(512, 1.0).unwrap();
        let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        let report = stability_check(&field, &field, 0.3, 0.3, &grid, 21, 0.0).unwrap();
        assert_eq!(report.sup_gap, 0.0);
        assert!(report.pass);
        assert_eq!(report.delta_b, 0.0);
        assert_eq!(report.delta_sigma, 0.0);
    }

    #[test]
    fn constant_drift_offset_accumulates_linearly() {
        // The gap evolves deterministically as δ_b·t; at horizon 1 the sup
        // is 1e-6 up to accumulated rounding.
        let grid = TimeGrid::new(1024, 1.0).unwrap();
        let f1 = CoefficientField::constant(0.0, 1.0);
        let f2 = CoefficientField::constant(1e-6, 1.0);
        let report = stability_check(&f1, &f2, 0.0, 0.0, &grid, 3, 0.0).unwrap();
        let tol = 8.0 * f64::EPSILON * 1024.0 * 2.0;
        assert!((report.sup_gap - 1e-6).abs() <= tol, "sup gap {}", report.sup_gap);
        assert!((report.delta_b - 1e-6).abs() <= 1e-22);
        assert!(report.pass);
    }

    #[test]
    fn volatility_offset_tracks_the_sign_sum_oracle() {
        // Gap oracle recomputed from the shared noise stream:
        // gap(t_k) = δ_σ·√dt·|Σ_{j<k} ε_j|.
        let grid = TimeGrid::new(1024, 1.0).unwrap();
        let f1 = CoefficientField::constant(0.0, 1.0);
        let f2 = CoefficientField::constant(0.0, 1.0 + 1e-6);
        let seed = 4;
        let report = stability_check(&f1, &f2, 0.0, 0.0, &grid, seed, 0.0).unwrap();
        let noise = NoiseStream::new(seed, 0);
        let sdt = grid.dt().sqrt();
        let mut sum = 0.0f64;
        let mut max_abs_sum = 0.0f64;
        for k in 0..1024u64 {
            sum += noise.sign_at(k);
            max_abs_sum = max_abs_sum.max(sum.abs());
        }
        let expect = 1e-6 * sdt * max_abs_sum;
        let tol = 8.0 * f64::EPSILON * 1024.0 * 2.0;
        assert!((report.sup_gap - expect).abs() <= tol, "{} vs {}", report.sup_gap, expect);
        assert!(report.pass);
    }

    #[test]
    fn lipschitz_probe_sees_the_ou_slope() {
        let grid = TimeGrid::new(256, 1.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(2.0)).unwrap();
        let report = stability_check(&field, &field, 0.5, 0.5, &grid, 8, 2.0).unwrap();
        assert!((report.lipschitz_observed_drift - 2.0).abs() < 1e-6);
        assert!(!report.lipschitz_exceeded);
        let tight = stability_check(&field, &field, 0.5, 0.5, &grid, 8, 1.0).unwrap();
        assert!(tight.lipschitz_exceeded);
    }

    #[test]
    fn default_threshold_grows_with_smaller_samples() {
        let big = ks_default_threshold(100_000, 100_000, 10_000);
        let small = ks_default_threshold(1_000, 1_000, 10_000);
        assert!(small > big);
        assert!(big > 0.007 && big < 0.013, "threshold {big}");
    }
}
