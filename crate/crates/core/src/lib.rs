//! Cause-of-death assignment from verbal autopsy interviews.
//!
//! The crate turns survey exports into a canonical tri-state symptom
//! matrix, screens it for internal contradictions, and codes each death
//! with one of four algorithms — an expert-prior Bayes rule, a naive
//! Bayes classifier, a tariff scorer, and a hierarchical Bayesian
//! sampler — before summarizing individual assignments into population
//! cause fractions.

pub mod consistency;
pub mod debias;
pub mod error;
pub mod ingest;
pub mod insilico;
pub mod interva;
pub mod model;
pub mod nbc;
pub mod report;
pub mod tariff;
mod training;
pub mod util;

pub use error::{Result, VaError};
