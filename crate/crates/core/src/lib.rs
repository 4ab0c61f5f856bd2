//! Shapley value attribution with an energy-based conditional density
//! estimator, plus exact, permutation-sampling and kernel baselines.

pub mod data;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod masking;
pub mod model;
pub mod nn;
pub mod proposal;
pub mod shapley;
pub mod trainer;

pub use error::{Error, Result};
