//! Per-step ratio check: (Δx)²/δt must stay inside an appreciability band.
//!
//! Nondifferentiable walk trajectories keep the ratio pinned near σ²;
//! smooth paths drive it to zero with the step size, which is exactly what
//! the band detects.

use crate::error::{Error, Result};
use crate::kahan::KahanSum;
use crate::walker::Path;

/// Violation locations are recorded up to this cap; the count is exact.
pub const MAX_RECORDED_VIOLATIONS: usize = 4096;

#[derive(Debug, Clone)]
pub struct HeisenbergReport {
    pub k_low: f64,
    pub k_high: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_mean: f64,
    /// Empirical ratio distribution: quantiles at 0%, 10%, .., 100%.
    pub deciles: [f64; 11],
    pub violation_count: usize,
    /// (step index, ratio) for the first violations, up to the cap.
    pub violations: Vec<(usize, f64)>,
    pub pass: bool,
    ratios: Vec<f64>,
}

impl HeisenbergReport {
    /// The full per-step ratio series r_k = (Δx_k)²/δt.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }
}

/// Computes r_k = (x(t_{k+1}) − x(t_k))²/δt for every step of a dense path
/// and verifies r_k ∈ [k_low, k_high] for all k.
pub fn heisenberg_check(path: &Path, k_low: f64, k_high: f64) -> Result<HeisenbergReport> {
    if !(k_low.is_finite() && k_high.is_finite() && 0.0 < k_low && k_low < k_high) {
        return Err(Error::InvalidConfig(format!(
            "appreciability band must satisfy 0 < k_low < k_high, got [{k_low}, {k_high}]"
        )));
    }
    if !path.is_dense() {
        return Err(Error::Resolution(format!(
            "heisenberg check needs every increment; path is thinned with stride {}",
            path.stride()
        )));
    }

    let dt = path.grid().dt();
    let values = path.values();
    let mut ratios = Vec::with_capacity(values.len() - 1);
    let mut mean = KahanSum::new();
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut violation_count = 0usize;

    for (k, w) in values.windows(2).enumerate() {
        let d = w[1] - w[0];
        let r = d * d / dt;
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
        mean.add(r);
        if r < k_low || r > k_high {
            violation_count += 1;
            if violations.len() < MAX_RECORDED_VIOLATIONS {
                violations.push((k, r));
            }
        }
        ratios.push(r);
    }

    let mut sorted = ratios.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut deciles = [0.0; 11];
    for (i, q) in deciles.iter_mut().enumerate() {
        let idx = (i * (sorted.len() - 1)) / 10;
        *q = sorted[idx];
    }

    Ok(HeisenbergReport {
        k_low,
        k_high,
        ratio_min,
        ratio_max,
        ratio_mean: mean.value() / ratios.len() as f64,
        deciles,
        violation_count,
        violations,
        pass: violation_count == 0,
        ratios,
    })
}
