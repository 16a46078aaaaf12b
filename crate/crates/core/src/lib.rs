//! Sequential Monte Carlo planning with soft-Q critics.
//!
//! The crate provides plain bootstrap SMC, SMC with value-function heuristic
//! factors and CriticSMC with putative action particles, together with the
//! critics they consume, a soft-Q training loop and a handful of small
//! environments with exact or near-exact reference answers.

pub mod critic;
pub mod env;
pub mod error;
pub mod math;
pub mod smc;
pub mod train;

pub use error::{Result, SmcError};
pub mod experiments;
