//! Decentralized convex optimization by gradient tracking.
//!
//! The crate simulates `m` agents, each holding a private smooth convex
//! objective `f_i`, that cooperatively minimize `F(x) = (1/m) Σ f_i(x)` by
//! exchanging vectors with their neighbors in a (possibly time-varying)
//! communication graph. It provides:
//!
//! * [`graph`]: graph schedules, Metropolis mixing matrices and the spectral
//!   constants `σ` / `σ_γ` that govern consensus speed.
//! * [`mixing`]: the operators that multiply agent states: plain gossip,
//!   Chebyshev-accelerated gossip and multi-round consensus.
//! * [`problems`]: local objectives (quadratic and logistic), aggregate
//!   gradients, Bregman/inexact-value quantities and an optimum oracle.
//! * [`algorithms`]: gradient tracking, accelerated gradient tracking and the
//!   averaged reference recursion, plus the run loop producing a [`RunTrace`].
//! * [`analysis`]: post-run certificates for the convergence bounds and
//!   empirical rate fitting.
//! * [`config`]: serializable experiment descriptions shared with the CLI.
//!
//! Agent states are stored row-stacked: an `m × n` matrix whose row `i` is
//! agent `i`'s local vector.

pub mod algorithms;
pub mod analysis;
pub mod config;
mod error;
pub mod graph;
pub mod mixing;
pub mod problems;

pub use algorithms::{RunTrace, TraceRow};
pub use error::{Error, Result};

/// Row-stacked aggregate matrix (`m × n`) or an `m × m` mixing matrix.
pub type Mat = nalgebra::DMatrix<f64>;
/// Column vector in `R^n`.
pub type Vector = nalgebra::DVector<f64>;
