//! The discrete random walk x(t+δt) = x(t) + b(t,x)·δt + σ(t,x)·ε(t)·√δt.
//!
//! Coefficients are always evaluated at the left endpoint (t_k, x(t_k));
//! there are no midpoint or implicit variants. Volatility positivity is
//! checked at every evaluation because user-supplied fields are opaque.

use std::fmt;
use std::sync::Arc;

use rand::prelude::Distribution;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid_noise::{CounterRng, NoiseDomain, NoiseStream, SignSource, TimeGrid};
use crate::stream::{self, PathSource};

/// Physical scale of the walk; the derived diffusion scale is hbar/mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalScale {
    hbar: f64,
    mass: f64,
}

impl PhysicalScale {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidConfig(format!("hbar must be positive, got {hbar}")));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidConfig(format!("mass must be positive, got {mass}")));
        }
        Ok(Self { hbar, mass })
    }

    /// Natural units hbar = mass = 1.
    pub fn natural() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn diffusion_scale(&self) -> f64 {
        self.hbar / self.mass
    }
}

/// How a coefficient field was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Constant,
    OuNelson,
    User,
}

type CoeffFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum FieldRepr {
    Constant { b: f64, sigma: f64 },
    OuNelson { omega: f64, sigma: f64 },
    /// b(t,x) = b0 + bx·x, σ(t,x) = s0 + sx·x.
    Affine { b0: f64, bx: f64, s0: f64, sx: f64 },
    User { drift: CoeffFn, volatility: CoeffFn },
}

/// Drift b(t,x) and volatility σ(t,x) for the walk.
#[derive(Clone)]
pub struct CoefficientField {
    repr: FieldRepr,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            FieldRepr::Constant { b, sigma } => write!(f, "CoefficientField::constant(b={b}, sigma={sigma})"),
            FieldRepr::OuNelson { omega, sigma } => write!(f, "CoefficientField::ou_nelson(omega={omega}, sigma={sigma})"),
            FieldRepr::Affine { b0, bx, s0, sx } => {
                write!(f, "CoefficientField::affine(b={b0}+{bx}x, sigma={s0}+{sx}x)")
            }
            FieldRepr::User { .. } => write!(f, "CoefficientField::user(..)"),
        }
    }
}

impl CoefficientField {
    /// Constant drift and volatility.
    pub fn constant(b: f64, sigma: f64) -> Self {
        Self {
            repr: FieldRepr::Constant { b, sigma },
        }
    }

    /// Affine coefficients b(t,x) = b0 + bx·x, σ(t,x) = s0 + sx·x.
    pub fn affine(b0: f64, bx: f64, s0: f64, sx: f64) -> Self {
        Self {
            repr: FieldRepr::Affine { b0, bx, s0, sx },
        }
    }

    /// Arbitrary user-supplied coefficient functions of (t, x).
    pub fn from_fns<B, S>(drift: B, volatility: S) -> Self
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            repr: FieldRepr::User {
                drift: Arc::new(drift),
                volatility: Arc::new(volatility),
            },
        }
    }

    pub fn kind(&self) -> FieldKind {
        match &self.repr {
            FieldRepr::Constant { .. } => FieldKind::Constant,
            FieldRepr::OuNelson { .. } => FieldKind::OuNelson,
            FieldRepr::Affine { .. } | FieldRepr::User { .. } => FieldKind::User,
        }
    }

    /// Drift evaluated at (t, x); non-finite values are a domain error.
    #[inline]
    pub fn drift_at(&self, t: f64, x: f64) -> Result<f64> {
        let b = match &self.repr {
            FieldRepr::Constant { b, .. } => *b,
            FieldRepr::OuNelson { omega, .. } => -omega * x,
            FieldRepr::Affine { b0, bx, .. } => b0 + bx * x,
            FieldRepr::User { drift, .. } => drift(t, x),
        };
        if !b.is_finite() {
            return Err(Error::NumericDomain { what: "drift", t, x });
        }
        Ok(b)
    }

    /// Volatility evaluated at (t, x); must be finite and strictly positive.
    #[inline]
    pub fn vol_at(&self, t: f64, x: f64) -> Result<f64> {
        let s = match &self.repr {
            FieldRepr::Constant { sigma, .. } => *sigma,
            FieldRepr::OuNelson { sigma, .. } => *sigma,
            FieldRepr::Affine { s0, sx, .. } => s0 + sx * x,
            FieldRepr::User { volatility, .. } => volatility(t, x),
        };
        if !s.is_finite() {
            return Err(Error::NumericDomain { what: "volatility", t, x });
        }
        if s <= 0.0 {
            return Err(Error::DegenerateVolatility { t, x, value: s });
        }
        Ok(s)
    }

    /// The same field with both coefficients shifted by constants,
    /// used to set up coupled stability runs.
    pub fn perturbed(&self, delta_b: f64, delta_sigma: f64) -> Self {
        match &self.repr {
            FieldRepr::Constant { b, sigma } => Self::constant(b + delta_b, sigma + delta_sigma),
            FieldRepr::OuNelson { omega, sigma } => Self::affine(delta_b, -omega, sigma + delta_sigma, 0.0),
            FieldRepr::Affine { b0, bx, s0, sx } => Self::affine(b0 + delta_b, *bx, s0 + delta_sigma, *sx),
            FieldRepr::User { drift, volatility } => {
                let d = Arc::clone(drift);
                let v = Arc::clone(volatility);
                Self::from_fns(move |t, x| d(t, x) + delta_b, move |t, x| v(t, x) + delta_sigma)
            }
        }
    }
}

/// Builds one of the named scenario fields.
///
/// `free`: b ≡ 0, σ ≡ √(hbar/mass). `ou_nelson`: b(t,x) = −ω·x with the
/// same σ; requires a positive `omega`.
pub fn builtin_field(name: &str, scale: PhysicalScale, omega: Option<f64>) -> Result<CoefficientField> {
    let sigma = scale.diffusion_scale().sqrt();
    match name {
        "free" => Ok(CoefficientField::constant(0.0, sigma)),
        "ou_nelson" => {
            let omega = omega.ok_or_else(|| {
                Error::InvalidConfig("omega is required for the ou_nelson field".into())
            })?;
            if !(omega.is_finite() && omega > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "omega must be positive for the ou_nelson field, got {omega}"
                )));
            }
            Ok(CoefficientField {
                repr: FieldRepr::OuNelson { omega, sigma },
            })
        }
        other => Err(Error::InvalidConfig(format!("unknown builtin field '{other}'"))),
    }
}

/// Distribution of the initial value x(0), sampled from a noise domain
/// disjoint from every step-noise stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialCondition::Point(x) if x.is_finite() => Ok(()),
            InitialCondition::Point(x) => {
                Err(Error::InvalidConfig(format!("initial point must be finite, got {x}")))
            }
            InitialCondition::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            InitialCondition::Uniform { lo, hi } => Err(Error::InvalidConfig(format!(
                "invalid uniform initial range [{lo}, {hi}]"
            ))),
            InitialCondition::Gaussian { mean, std } if mean.is_finite() && std.is_finite() && *std >= 0.0 => {
                Ok(())
            }
            InitialCondition::Gaussian { mean, std } => Err(Error::InvalidConfig(format!(
                "invalid gaussian initial condition (mean {mean}, std {std})"
            ))),
        }
    }

    pub(crate) fn sample(&self, seed: u64, path_id: u64) -> f64 {
        match *self {
            InitialCondition::Point(x) => x,
            InitialCondition::Uniform { lo, hi } => {
                let mut rng = CounterRng::new(seed, path_id, NoiseDomain::Initial);
                lo + rng.uniform() * (hi - lo)
            }
            InitialCondition::Gaussian { mean, std } => {
                let mut rng = CounterRng::new(seed, path_id, NoiseDomain::Initial);
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + std * z
            }
        }
    }
}

/// One realization x: grid → ℝ, stored at every `stride`-th grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    path_id: u64,
    stride: usize,
    values: Vec<f64>,
}

impl Path {
    /// Wraps stored values; `values.len()` must equal n_steps/stride + 1.
    pub fn from_values(grid: TimeGrid, path_id: u64, stride: usize, values: Vec<f64>) -> Result<Self> {
        if stride == 0 || grid.n_steps() % stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "stride {stride} must divide n_steps {}",
                grid.n_steps()
            )));
        }
        let expect = grid.n_steps() / stride + 1;
        if values.len() != expect {
            return Err(Error::InvalidConfig(format!(
                "path needs {expect} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("path contains non-finite value {bad}")));
        }
        Ok(Self {
            grid,
            path_id,
            stride,
            values,
        })
    }

    /// Samples a function of time on the grid (dense), for baselines like
    /// x(t) = t.
    pub fn from_fn(grid: TimeGrid, path_id: u64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = grid.points().map(f).collect();
        Self::from_values(grid, path_id, 1, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn is_dense(&self) -> bool {
        self.stride == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Time of the i-th stored value.
    pub fn t_of(&self, i: usize) -> f64 {
        self.grid.t(i * self.stride)
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("path is never empty")
    }
}

/// A set of i.i.d. realizations sharing one grid and one field.
#[derive(Debug, Clone)]
pub struct Ensemble {
    grid: TimeGrid,
    field: CoefficientField,
    seed: u64,
    paths: Vec<Path>,
}

impl Ensemble {
    pub fn from_paths(grid: TimeGrid, field: CoefficientField, seed: u64, paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one path".into()));
        }
        if let Some(p) = paths.iter().find(|p| *p.grid() != grid) {
            return Err(Error::InvalidConfig(format!(
                "path {} does not share the ensemble grid",
                p.path_id()
            )));
        }
        let mut ids: Vec<u64> = paths.iter().map(|p| p.path_id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("path ids must be distinct".into()));
        }
        Ok(Self {
            grid,
            field,
            seed,
            paths,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn stride(&self) -> usize {
        self.paths[0].stride()
    }

    pub fn is_dense(&self) -> bool {
        self.paths.iter().all(Path::is_dense)
    }

    /// Values of every path at the stored grid point nearest to `t`.
    pub fn marginal_at(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.grid.nearest_index(t)?;
        let stride = self.stride();
        let idx = ((k as f64 / stride as f64).round() as usize).min(self.grid.n_steps() / stride);
        Ok(self.paths.iter().map(|p| p.values()[idx]).collect())
    }
}

/// One explicit left-point step: x + b(t,x)·dt + σ(t,x)·eps·√dt.
pub fn step(x: f64, t: f64, field: &CoefficientField, eps: f64, dt: f64) -> Result<f64> {
    debug_assert!(eps == 1.0 || eps == -1.0, "eps must be ±1");
    debug_assert!(dt > 0.0);
    let b = field.drift_at(t, x)?;
    let s = field.vol_at(t, x)?;
    Ok(x + b * dt + s * eps * dt.sqrt())
}

/// Dense walk loop shared by the public simulators and the path sources.
/// `out` receives x(t_0) .. x(t_n).
///
/// The per-kind loops below are pure specializations: constant
/// coefficients are validated once instead of per step, and ±1 noise is
/// applied by sign selection. Both transformations are bitwise-neutral
/// (multiplication by ±1 is exact and sign-symmetric), which the
/// cross-checks in the test suite rely on.
fn fill_walk(
    field: &CoefficientField,
    x0: f64,
    grid: &TimeGrid,
    noise: &impl SignSource,
    out: &mut Vec<f64>,
) -> Result<()> {
    if !x0.is_finite() {
        return Err(Error::InvalidConfig(format!("x0 must be finite, got {x0}")));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    out.clear();
    out.reserve(n + 1);
    out.push(x0);
    match &field.repr {
        FieldRepr::Constant { b, sigma } => {
            field.drift_at(0.0, x0).map_err(|e| e.at_step(0))?;
            field.vol_at(0.0, x0).map_err(|e| e.at_step(0))?;
            let b_dt = b * dt;
            let s_sdt = sigma * sdt;
            let mut x = x0;
            for k in 0..n {
                let noise_term = if noise.sign_at(k as u64) > 0.0 { s_sdt } else { -s_sdt };
                x = x + b_dt + noise_term;
                if !x.is_finite() {
                    return Err(Error::NumericDomain { what: "state", t: grid.t(k), x }.at_step(k));
                }
                out.push(x);
            }
        }
        FieldRepr::OuNelson { omega, sigma } => {
            field.vol_at(0.0, x0).map_err(|e| e.at_step(0))?;
            if !omega.is_finite() {
                return Err(Error::NumericDomain { what: "drift", t: 0.0, x: x0 }.at_step(0));
            }
            let s_sdt = sigma * sdt;
            let mut x = x0;
            for k in 0..n {
                let b = -omega * x;
                let noise_term = if noise.sign_at(k as u64) > 0.0 { s_sdt } else { -s_sdt };
                x = x + b * dt + noise_term;
                if !x.is_finite() {
                    return Err(Error::NumericDomain { what: "state", t: grid.t(k), x }.at_step(k));
                }
                out.push(x);
            }
        }
        _ => {
            let mut x = x0;
            for k in 0..n {
                let t = grid.t(k);
                let b = field.drift_at(t, x).map_err(|e| e.at_step(k))?;
                let s = field.vol_at(t, x).map_err(|e| e.at_step(k))?;
                let eps = noise.sign_at(k as u64);
                x = x + b * dt + s * eps * sdt;
                if !x.is_finite() {
                    return Err(Error::NumericDomain { what: "state", t, x }.at_step(k));
                }
                out.push(x);
            }
        }
    }
    Ok(())
}

/// Simulates one dense path driven by the given noise stream.
pub fn simulate_path(
    field: &CoefficientField,
    x0: f64,
    grid: &TimeGrid,
    stream: &NoiseStream,
) -> Result<Path> {
    simulate_path_with(field, x0, grid, stream.path_id(), stream)
}

/// [`simulate_path`] generalised over the sign source, so tests can force
/// particular sign patterns.
pub fn simulate_path_with(
    field: &CoefficientField,
    x0: f64,
    grid: &TimeGrid,
    path_id: u64,
    noise: &impl SignSource,
) -> Result<Path> {
    let mut values = Vec::new();
    fill_walk(field, x0, grid, noise, &mut values)?;
    Path::from_values(*grid, path_id, 1, values)
}

/// The ±1-driven walk as a replayable path source: path i is driven by
/// the noise stream (seed, i) and its initial value by the disjoint
/// initial-condition stream.
#[derive(Debug, Clone)]
pub struct RademacherWalk {
    pub field: CoefficientField,
    pub x0: InitialCondition,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

impl RademacherWalk {
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

impl PathSource for RademacherWalk {
    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn fill_path(&self, path_id: u64, out: &mut Vec<f64>) -> Result<()> {
        let x0 = self.x0.sample(self.seed, path_id);
        let noise = NoiseStream::new(self.seed, path_id);
        fill_walk(&self.field, x0, &self.grid, &noise, out)
    }
}

/// Simulates `n_paths` independent paths; identical output for any worker
/// count because every path's noise is a pure function of (seed, path_id).
pub fn simulate_ensemble(
    field: &CoefficientField,
    x0: InitialCondition,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    simulate_ensemble_thinned(field, x0, grid, n_paths, seed, 1)
}

/// As [`simulate_ensemble`], keeping only every `stride`-th grid point.
/// Estimators that need every increment refuse thinned ensembles.
pub fn simulate_ensemble_thinned(
    field: &CoefficientField,
    x0: InitialCondition,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    stride: usize,
) -> Result<Ensemble> {
    let source = RademacherWalk::new(field.clone(), x0, *grid, n_paths, seed)?;
    let paths = stream::materialize(&source, stride)?;
    Ensemble::from_paths(*grid, field.clone(), seed, paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_noise::TimeGrid;

    /// Forces a fixed sign pattern, cycling if the walk is longer.
    pub(crate) struct FixedSigns(pub Vec<f64>);

    impl SignSource for FixedSigns {
        fn sign_at(&self, k: u64) -> f64 {
            self.0[k as usize % self.0.len()]
        }
    }

    #[test]
    fn step_direct_substitution() {
        let field = CoefficientField::constant(0.0, 1.0);
        let r = step(0.0, 0.0, &field, 1.0, 0.01).unwrap();
        assert!((r - 0.1).abs() < 1e-16, "got {r}");

        let field = CoefficientField::constant(3.0, 1.0);
        let r = step(2.0, 0.0, &field, -1.0, 0.04).unwrap();
        assert!((r - 1.92).abs() < 1e-15, "got {r}");
    }

    #[test]
    fn step_rejects_zero_volatility() {
        let field = CoefficientField::constant(0.0, 0.0);
        match step(0.0, 0.0, &field, 1.0, 0.01) {
            Err(Error::DegenerateVolatility { value, .. }) => assert_eq!(value, 0.0),
            other => panic!("expected degenerate-volatility error, got {other:?}"),
        }
    }

    #[test]
    fn step_rejects_non_finite_drift() {
        let field = CoefficientField::from_fns(|_, _| f64::NAN, |_, _| 1.0);
        match step(0.5, 0.25, &field, 1.0, 0.01) {
            Err(Error::NumericDomain { what: "drift", t, x }) => {
                assert_eq!((t, x), (0.25, 0.5));
            }
            other => panic!("expected numeric-domain error, got {other:?}"),
        }
    }

    #[test]
    fn all_plus_walk_climbs_in_exact_half_steps() {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let noise = FixedSigns(vec![1.0]);
        let path = simulate_path_with(&field, 0.0, &grid, 0, &noise).unwrap();
        assert_eq!(path.values(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn alternating_two_step_walk() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let field = CoefficientField::constant(1.0, 1.0);
        let noise = FixedSigns(vec![1.0, -1.0]);
        let path = simulate_path_with(&field, 0.0, &grid, 0, &noise).unwrap();
        let mid = 0.5 + 0.5_f64.sqrt();
        assert!((path.values()[1] - mid).abs() < 1e-15);
        assert!((path.values()[1] - 1.2071).abs() < 1e-4);
        assert!((path.values()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn driftless_final_value_telescopes_to_sign_sum() {
        // Dyadic grid: dt = 2^-10, √dt = 2^-5, so every partial sum is
        // exactly representable and the telescoped identity is bitwise.
        let grid = TimeGrid::new(1024, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let stream = NoiseStream::new(99, 7);
        let path = simulate_path(&field, 0.0, &grid, &stream).unwrap();
        let sign_sum: f64 = (0..1024u64).map(|k| stream.sign_at(k)).sum();
        assert_eq!(path.final_value(), grid.dt().sqrt() * sign_sum);
        assert_eq!(path.path_id(), 7);
    }

    #[test]
    fn telescoping_holds_at_rounding_scale_on_non_dyadic_grid() {
        let n = 1000;
        let grid = TimeGrid::new(n, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let stream = NoiseStream::new(5, 0);
        let path = simulate_path(&field, 0.0, &grid, &stream).unwrap();
        let sign_sum: f64 = (0..n as u64).map(|k| stream.sign_at(k)).sum();
        let expected = grid.dt().sqrt() * sign_sum;
        let tol = 2.0 * f64::EPSILON * n as f64 * path.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!((path.final_value() - expected).abs() <= tol);
    }

    #[test]
    fn simulate_path_annotates_failing_step() {
        // Volatility collapses once x crosses 0.5.
        let field = CoefficientField::from_fns(|_, _| 0.0, |_, x| if x > 0.5 { -1.0 } else { 1.0 });
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let noise = FixedSigns(vec![1.0]);
        let err = simulate_path_with(&field, 0.0, &grid, 0, &noise).unwrap_err();
        match err {
            Error::AtStep { step, ref source } => {
                assert!(step > 0);
                assert!(matches!(**source, Error::DegenerateVolatility { .. }));
            }
            other => panic!("expected step-annotated error, got {other:?}"),
        }
    }

    #[test]
    fn singleton_ensemble_reduces_to_simulate_path() {
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 1, 11).unwrap();
        let lone = simulate_path(&field, 0.0, &grid, &NoiseStream::new(11, 0)).unwrap();
        assert_eq!(ens.n_paths(), 1);
        assert_eq!(ens.paths()[0].values(), lone.values());
    }

    #[test]
    fn ensemble_mean_obeys_clt_bound() {
        // CLT oracle: final values have variance ≈ 1 at t = 1, so the
        // ensemble mean stays within 4/√n_paths of 0 at 4-sigma confidence.
        let grid = TimeGrid::new(256, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let n_paths = 10_000;
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, n_paths, 21).unwrap();
        let mean: f64 = ens.paths().iter().map(Path::final_value).sum::<f64>() / n_paths as f64;
        assert!(mean.abs() <= 4.0 / (n_paths as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn ensembles_are_identical_for_any_worker_count() {
        let grid = TimeGrid::new(512, 1.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(1.0)).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                simulate_ensemble(&field, InitialCondition::Gaussian { mean: 0.0, std: 0.5 }, &grid, 1000, 42)
                    .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        for (pa, pb) in a.paths().iter().zip(b.paths()) {
            assert_eq!(pa.path_id(), pb.path_id());
            assert_eq!(pa.values(), pb.values());
        }
    }

    #[test]
    fn builtin_free_field_has_unit_volatility_in_natural_units() {
        let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
        assert_eq!(field.vol_at(0.3, 2.0).unwrap(), 1.0);
        assert_eq!(field.drift_at(0.3, 2.0).unwrap(), 0.0);
        assert_eq!(field.kind(), FieldKind::Constant);
    }

    #[test]
    fn builtin_ou_drift_is_minus_omega_x() {
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(2.0)).unwrap();
        assert_eq!(field.drift_at(0.0, 0.5).unwrap(), -1.0);
        assert_eq!(field.kind(), FieldKind::OuNelson);
    }

    #[test]
    fn builtin_rejects_unknown_name_and_missing_omega() {
        assert!(builtin_field("brownian_bridge", PhysicalScale::natural(), None).is_err());
        assert!(builtin_field("ou_nelson", PhysicalScale::natural(), None).is_err());
        assert!(builtin_field("ou_nelson", PhysicalScale::natural(), Some(-1.0)).is_err());
    }

    #[test]
    fn ou_long_run_variance_matches_closed_form() {
        // Ornstein-Uhlenbeck stationary-variance oracle σ²/(2ω) = 0.5.
        let grid = TimeGrid::new(4000, 8.0).unwrap();
        let field = builtin_field("ou_nelson", PhysicalScale::natural(), Some(1.0)).unwrap();
        let n_paths = 4000;
        let ens = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, n_paths, 17).unwrap();
        let finals: Vec<f64> = ens.paths().iter().map(Path::final_value).collect();
        let mean: f64 = finals.iter().sum::<f64>() / n_paths as f64;
        let var: f64 = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_paths as f64;
        assert!((var - 0.5).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn constant_coefficients_satisfy_exact_increment_identity() {
        // For constant b, σ the constructed noise term satisfies
        // (σ·ε·√dt)²/dt = σ² to within a few ulps, since ε² = 1.
        let grid = TimeGrid::new(100_000, 1.0).unwrap();
        let dt = grid.dt();
        let sdt = dt.sqrt();
        let sigma = 1.0f64;
        let stream = NoiseStream::new(3, 0);
        let tol = 8.0 * f64::EPSILON;
        for k in 0..grid.n_steps() as u64 {
            let eps = stream.sign_at(k);
            let noise_term = sigma * eps * sdt;
            let ratio = noise_term * noise_term / dt;
            assert!((ratio - sigma * sigma).abs() <= tol, "step {k}: ratio {ratio}");
        }
    }

    #[test]
    fn dyadic_grid_makes_stored_ratios_exact() {
        // dt = 2^-10 keeps every path value exactly representable, so even
        // ratios recomputed from stored differences are exactly σ².
        let grid = TimeGrid::new(1024, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let path = simulate_path(&field, 0.0, &grid, &NoiseStream::new(8, 0)).unwrap();
        let dt = grid.dt();
        for w in path.values().windows(2) {
            let d = w[1] - w[0];
            assert_eq!(d * d / dt, 1.0);
        }
    }

    #[test]
    fn doubling_sigma_doubles_every_value_exactly() {
        // Power-of-two scaling commutes with every rounding step.
        let grid = TimeGrid::new(777, 1.0).unwrap();
        let base = CoefficientField::constant(0.0, 1.0);
        let scaled = CoefficientField::constant(0.0, 2.0);
        let stream = NoiseStream::new(13, 4);
        let a = simulate_path(&base, 0.0, &grid, &stream).unwrap();
        let b = simulate_path(&scaled, 0.0, &grid, &stream).unwrap();
        for (va, vb) in a.values().iter().zip(b.values()) {
            assert_eq!(*vb, 2.0 * va);
        }
    }

    #[test]
    fn generic_sigma_scaling_holds_to_accumulated_rounding() {
        let grid = TimeGrid::new(500, 1.0).unwrap();
        let c = 3.7;
        let base = CoefficientField::constant(0.0, 1.0);
        let scaled = CoefficientField::constant(0.0, c);
        let stream = NoiseStream::new(13, 4);
        let a = simulate_path(&base, 0.0, &grid, &stream).unwrap();
        let b = simulate_path(&scaled, 0.0, &grid, &stream).unwrap();
        for (va, vb) in a.values().iter().zip(b.values()) {
            let tol = 4.0 * f64::EPSILON * 500.0 * (c * va.abs()).max(1.0);
            assert!((vb - c * va).abs() <= tol);
        }
    }

    #[test]
    fn shifting_x0_shifts_every_value_exactly_on_dyadic_grid() {
        let grid = TimeGrid::new(1024, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let stream = NoiseStream::new(19, 2);
        let a = simulate_path(&field, 0.0, &grid, &stream).unwrap();
        let b = simulate_path(&field, 1.0, &grid, &stream).unwrap();
        for (va, vb) in a.values().iter().zip(b.values()) {
            assert_eq!(*vb, va + 1.0);
        }
    }

    #[test]
    fn ensemble_rejects_duplicate_ids_and_mixed_grids() {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let other_grid = TimeGrid::new(8, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let p0 = Path::from_fn(grid, 0, |t| t).unwrap();
        let p0_dup = Path::from_fn(grid, 0, |t| 2.0 * t).unwrap();
        assert!(Ensemble::from_paths(grid, field.clone(), 0, vec![p0.clone(), p0_dup]).is_err());
        let p_other = Path::from_fn(other_grid, 1, |t| t).unwrap();
        assert!(Ensemble::from_paths(grid, field, 0, vec![p0, p_other]).is_err());
    }

    #[test]
    fn thinned_ensemble_keeps_every_fourth_point() {
        let grid = TimeGrid::new(64, 1.0).unwrap();
        let field = CoefficientField::constant(0.0, 1.0);
        let dense = simulate_ensemble(&field, InitialCondition::Point(0.0), &grid, 3, 5).unwrap();
        let thin = simulate_ensemble_thinned(&field, InitialCondition::Point(0.0), &grid, 3, 5, 4).unwrap();
        assert!(!thin.is_dense());
        for (d, t) in dense.paths().iter().zip(thin.paths()) {
            let expect: Vec<f64> = d.values().iter().copied().step_by(4).collect();
            assert_eq!(t.values(), expect.as_slice());
        }
    }
}
