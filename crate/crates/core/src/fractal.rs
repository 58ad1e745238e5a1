//! Divider (variation-method) fractal dimension of sample paths.
//!
//! The mean absolute increment over a coarsening interval Δ scales as Δ^H
//! for self-affine paths; the divider dimension is D = 1/H. Pure ±1-driven
//! walks give H = ½ and hence D = 2, while Lipschitz curves give H = 1 and
//! D = 1. The log-log fit uses scales between 16·δt (below which the ±1
//! lattice biases H) and horizon/4 (above which too few blocks remain).

use crate::error::{Error, Result};
use crate::kahan::KahanSum;
use crate::walker::Ensemble;

/// Smallest usable scale, in units of δt.
pub const MIN_SCALE_STEPS: usize = 16;
/// Scales may not exceed this fraction of the horizon.
pub const MAX_SCALE_FRACTION: f64 = 0.25;
/// Log-log decades the scale set must span for a dimension fit.
pub const MIN_SCALE_DECADES: f64 = 1.5;
/// Fits below this R² are flagged unreliable.
pub const MIN_FIT_R2: f64 = 0.99;

fn steps_of_scale(delta: f64, dt: f64) -> Result<usize> {
    let ratio = delta / dt;
    let m = ratio.round();
    if !(delta.is_finite() && delta > 0.0) || (ratio - m).abs() > 1e-9 * ratio.max(1.0) || m < 1.0 {
        return Err(Error::Resolution(format!(
            "scale {delta} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(m as usize)
}

/// Average of |x(t+Δ) − x(t)| over all paths and all block-aligned t.
pub fn mean_increment(ensemble: &Ensemble, delta: f64) -> Result<f64> {
    let grid = ensemble.grid();
    let dt = grid.dt();
    if delta > MAX_SCALE_FRACTION * grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "scale {delta} exceeds horizon/4 = {}",
            MAX_SCALE_FRACTION * grid.horizon()
        )));
    }
    let m = steps_of_scale(delta, dt)?;
    let stride = ensemble.stride();
    if m % stride != 0 {
        return Err(Error::Resolution(format!(
            "scale of {m} steps is not resolvable at storage stride {stride}"
        )));
    }
    let hop = m / stride;
    let mut acc = KahanSum::new();
    let mut count = 0u64;
    for path in ensemble.paths() {
        let values = path.values();
        let blocks = (values.len() - 1) / hop;
        for j in 0..blocks {
            acc.add((values[(j + 1) * hop] - values[j * hop]).abs());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("no aligned increments at this scale".into()));
    }
    Ok(acc.value() / count as f64)
}

/// Variation-method dimension estimate from a log-log fit.
#[derive(Debug, Clone)]
pub struct DimensionEstimate {
    /// The scales used, sorted increasing.
    pub scales: Vec<f64>,
    /// ⟨|x(t+Δ) − x(t)|⟩ per scale.
    pub mean_increments: Vec<f64>,
    /// Fitted scaling exponent H.
    pub hurst: f64,
    /// Divider dimension D = 1/H.
    pub dimension: f64,
    /// Intercept of the log-log fit.
    pub intercept: f64,
    /// R² of the log-log regression.
    pub r_squared: f64,
    /// True when R² ≥ 0.99 over at least 4 scales.
    pub reliable: bool,
}

/// Fits log⟨|Δx|⟩ = H·log Δ + c by least squares over the given scales
/// and reports D = 1/H.
pub fn estimate_dimension(ensemble: &Ensemble, scales: &[f64]) -> Result<DimensionEstimate> {
    if scales.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "dimension fit needs at least 4 scales, got {}",
            scales.len()
        )));
    }
    let grid = ensemble.grid();
    let dt = grid.dt();
    let mut sorted: Vec<f64> = scales.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = *sorted.last().unwrap();
    if lo < MIN_SCALE_STEPS as f64 * dt * (1.0 - 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "scale {lo} is below the {MIN_SCALE_STEPS}·dt floor"
        )));
    }
    if (hi / lo).log10() < MIN_SCALE_DECADES - 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "scales span {:.3} decades; at least {MIN_SCALE_DECADES} required",
            (hi / lo).log10()
        )));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig("scales must be distinct".into()));
    }

    let means: Vec<f64> = sorted
        .iter()
        .map(|&d| mean_increment(ensemble, d))
        .collect::<Result<_>>()?;
    if let Some(&bad) = means.iter().find(|&&m| !(m > 0.0)) {
        return Err(Error::InsufficientData(format!(
            "mean increment {bad} is not positive; the path set has no variation at some scale"
        )));
    }

    let xs: Vec<f64> = sorted.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidConfig("degenerate fit: no variance in log-scale".into()));
    }
    let hurst = (n * sxy - sx * sy) / denom;
    let intercept = (sy - hurst * sx) / n;

    let y_mean = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = hurst * x + intercept;
            (y - fit) * (y - fit)
        })
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(DimensionEstimate {
        scales: sorted,
        mean_increments: means,
        hurst,
        dimension: 1.0 / hurst,
        intercept,
        r_squared,
        reliable: r_squared >= MIN_FIT_R2,
    })
}

/// The default divider scale set {16, 64, 256, 1024, 4096}·δt.
pub fn default_scales(dt: f64) -> Vec<f64> {
    [16.0, 64.0, 256.0, 1024.0, 4096.0].iter().map(|m| m * dt).collect()
}
