//! The discretized time axis and reproducible ±1 noise streams.
//!
//! Every random quantity in the engine derives from a counter-based
//! construction: the value at (seed, path_id, position) is a pure function
//! of those three integers, so any number of paths can be simulated in any
//! order, on any number of workers, and replayed bit-for-bit. Streams for
//! different purposes (walk signs, Gaussian reference increments, initial
//! conditions) are domain-separated so they never overlap.

use rand::RngCore;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_TAG: u64 = 0x36D4_8E1C_BB0A_91D7;
const DOMAIN_TAG: u64 = 0xD6E8_FEB8_6659_FD93;

/// SplitMix64 finalizer; full-avalanche mix of a 64-bit word.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-streams carved out of one (seed, path_id) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NoiseDomain {
    /// The ±1 signs driving the walk.
    Rademacher = 1,
    /// Standard normal increments for the reference diffusion.
    Gaussian = 2,
    /// Initial-condition sampling, disjoint from all step noise.
    Initial = 3,
}

#[inline]
fn stream_key(seed: u64, path_id: u64, domain: NoiseDomain) -> u64 {
    let k = mix64(seed ^ SEED_TAG);
    let k = mix64(k ^ path_id.wrapping_mul(GOLDEN_GAMMA));
    mix64(k ^ (domain as u64).wrapping_mul(DOMAIN_TAG))
}

#[inline]
fn word_at(key: u64, position: u64) -> u64 {
    mix64(key.wrapping_add(position.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform grid t_k = k·dt for k = 0..=n_steps, horizon = n_steps·dt.
///
/// dt is stored once and grid points are formed as k·dt, so the time axis
/// drifts by at most one ulp per multiplication instead of accumulating
/// O(n) addition error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "horizon must be finite and positive, got {horizon}"
            )));
        }
        Ok(Self {
            n_steps,
            dt: horizon / n_steps as f64,
            horizon,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The k-th grid point t_k = k·dt.
    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.t(k))
    }

    /// Index of the grid point nearest to `t`; errors outside [0, horizon].
    pub fn nearest_index(&self, t: f64) -> Result<usize> {
        let slack = 1e-9 * self.horizon.max(1.0);
        if !t.is_finite() || t < -slack || t > self.horizon + slack {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let k = (t / self.dt).round() as usize;
        Ok(k.min(self.n_steps))
    }
}

/// A reproducible stream of independent equiprobable ±1 values.
///
/// The value at step k is a pure function of (seed, path_id, k); distinct
/// (seed, path_id) pairs yield statistically independent streams.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    path_id: u64,
    key: u64,
    position: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, path_id: u64) -> Self {
        Self {
            seed,
            path_id,
            key: stream_key(seed, path_id, NoiseDomain::Rademacher),
            position: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// The ±1 value at step k, independent of the cursor.
    #[inline]
    pub fn sign_at(&self, k: u64) -> f64 {
        if word_at(self.key, k) >> 63 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// The ±1 value at the cursor; advances the cursor.
    pub fn next_sign(&mut self) -> f64 {
        let s = self.sign_at(self.position);
        self.position += 1;
        s
    }
}

/// Equiprobable ±1 draws indexed by step; implemented by [`NoiseStream`]
/// and by test stubs that force particular sign patterns.
pub trait SignSource {
    fn sign_at(&self, k: u64) -> f64;
}

impl SignSource for NoiseStream {
    #[inline]
    fn sign_at(&self, k: u64) -> f64 {
        NoiseStream::sign_at(self, k)
    }
}

/// Counter-based word stream exposed as an [`RngCore`] so distribution
/// samplers (uniform initial conditions, ziggurat normals) can draw from
/// the same deterministic construction.
#[derive(Debug, Clone)]
pub(crate) struct CounterRng {
    key: u64,
    position: u64,
}

impl CounterRng {
    pub(crate) fn new(seed: u64, path_id: u64, domain: NoiseDomain) -> Self {
        Self {
            key: stream_key(seed, path_id, domain),
            position: 0,
        }
    }

    #[inline]
    pub(crate) fn next_word(&mut self) -> u64 {
        let w = word_at(self.key, self.position);
        self.position += 1;
        w
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    #[inline]
    pub(crate) fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let word = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Frequency and serial-correlation statistics of a sign stream.
#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub n: usize,
    /// Empirical P(ε = +1).
    pub p_plus: f64,
    /// Empirical mean of ε.
    pub mean: f64,
    /// One-degree-of-freedom chi-square statistic against the fair coin.
    pub chi_square: f64,
    /// Upper-tail p-value of the chi-square statistic.
    pub p_value: f64,
    /// Serial correlations at lags 1..=10.
    pub autocorr: [f64; 10],
}

impl NoiseReport {
    /// 4-sigma binomial bound on |mean| and on each serial correlation.
    pub fn sigma_bound(&self) -> f64 {
        4.0 / (self.n as f64).sqrt()
    }

    /// The fairness and independence checks at their default tolerances:
    /// |mean| and all lag correlations within 4/√n, chi-square p-value
    /// inside (0.001, 0.999).
    pub fn passes_default_bounds(&self) -> bool {
        let bound = self.sigma_bound();
        self.mean.abs() <= bound
            && self.p_value > 0.001
            && self.p_value < 0.999
            && self.autocorr.iter().all(|r| r.abs() <= bound)
    }
}

/// Empirical fairness/independence report over the first `n` draws.
pub fn noise_bias_report(stream: &NoiseStream, n: usize) -> Result<NoiseReport> {
    if n < 100 {
        return Err(Error::InsufficientSamples { needed: 100, got: n });
    }
    let signs: Vec<f64> = (0..n as u64).map(|k| stream.sign_at(k)).collect();
    Ok(report_from_signs(&signs))
}

/// The statistics of [`noise_bias_report`] for an explicit sign sequence.
pub fn report_from_signs(signs: &[f64]) -> NoiseReport {
    let n = signs.len();
    let n_f = n as f64;
    let plus_count = signs.iter().filter(|&&s| s > 0.0).count();
    let p_plus = plus_count as f64 / n_f;
    let mean: f64 = {
        // Sum of ±1 is exact in f64 for any practical n.
        let total: f64 = signs.iter().sum();
        total / n_f
    };

    // chi² with 1 df against P(+1) = P(−1) = ½ reduces to z² where
    // z = (n₊ − n₋)/√n.
    let z = (2.0 * plus_count as f64 - n_f) / n_f.sqrt();
    let chi_square = z * z;
    let p_value = statrs::function::erf::erfc((chi_square / 2.0).sqrt());

    let mut autocorr = [0.0_f64; 10];
    for (i, r) in autocorr.iter_mut().enumerate() {
        let lag = i + 1;
        if n > lag {
            let total: f64 = (0..n - lag).map(|j| signs[j] * signs[j + lag]).sum();
            *r = total / (n - lag) as f64;
        }
    }

    NoiseReport {
        n,
        p_plus,
        mean,
        chi_square,
        p_value,
        autocorr,
    }
}
