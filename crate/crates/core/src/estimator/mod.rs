//! Recovers the drift/volatility decomposition of walk increments from
//! sampled ensembles, checks the one-step ratio (Heisenberg) condition,
//! and diagnoses whether coefficients depend on more than (t, x).

mod decomposition;
mod heisenberg;
mod markov;
mod panel;

pub use decomposition::{
    estimate_decomposition, estimate_decomposition_scanned, residual_moments, CellEstimate,
    DecompositionEstimate, ResidualMoments, StepSelection,
};
pub use heisenberg::{heisenberg_check, HeisenbergReport};
pub use markov::{
    markov_diagnostic, markov_diagnostic_scanned, MarkovCellStat, MarkovReport, MarkovVerdict,
    SignCoupledWalk,
};
pub use panel::IncrementPanel;
