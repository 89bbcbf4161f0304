//! Coherency (existence) and completeness (uniqueness) analysis for
//! piecewise-linear rational-expectations models with occasionally binding
//! constraints, driven by finite-state Markov shocks.
//!
//! The crate is organised bottom-up:
//!
//! * [`markov`] builds and validates the exogenous Markov chains.
//! * [`canonical`] holds the canonical regime-switching model and builders
//!   for the standard zero-lower-bound examples.
//! * [`glm`] assembles the per-configuration matrices and runs the
//!   determinant-sign coherency test.
//! * [`msv`] enumerates and verifies minimum-state-variable solutions.
//! * [`closedform`] evaluates analytical cutoffs and support bounds.
//! * [`dynamics`] covers the nonlinear maps, quasi-differencing and the
//!   backward solver for models with a lagged endogenous state.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canonical;
pub mod closedform;
pub mod dynamics;
mod error;
pub mod glm;
mod linalg;
pub mod markov;
pub mod msv;

pub use canonical::{CanonicalModel, ConstraintSpec, ReducedNk, RegimeBlocks};
pub use error::{Error, Result};
pub use glm::{CoherencyOptions, CoherencyReport, RegimeConfig, RegimeSystem, Verdict};
pub use markov::MarkovChain;
pub use msv::MsvSolution;
