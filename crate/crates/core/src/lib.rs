//! zitterwalk-core: stochastic simulation and verification engine for
//! discrete random walks driven by ±1 noise at a very small time step.
//!
//! The crate simulates the walk x(t+δt) = x(t) + b(t,x)·δt + σ(t,x)·ε·√δt
//! on a uniform grid, estimates its drift/volatility decomposition from
//! sampled ensembles, and verifies the model's structural properties
//! numerically:
//!
//! - [`grid_noise`] — the time grid and reproducible ±1 noise streams;
//! - [`walker`] — paths and ensembles of the walk;
//! - [`estimator`] — one-step ratio (Heisenberg-condition) checks, binned
//!   drift/volatility recovery, and a Markov-property diagnostic;
//! - [`equivalence`] — distributional comparison against a Gaussian
//!   reference diffusion and a coupled-walk stability check;
//! - [`fractal`] — divider-method fractal dimension of sample paths;
//! - [`stream`] — deterministic chunked streaming for ensembles too large
//!   to hold in memory.
//!
//! All randomness is counter-based: every value is a pure function of
//! (seed, path id, position), so runs are reproducible bit-for-bit for any
//! worker count.

pub mod error;
pub mod grid_noise;
pub mod walker;
pub mod stream;
pub mod estimator;
pub mod equivalence;
pub mod fractal;

mod kahan;

pub use error::{Error, Result};
