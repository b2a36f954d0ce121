pub mod baselines;
pub mod cli;
pub mod corruption;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod seeds;
pub mod selftest;
pub mod synth;
pub mod valuation;

pub use error::{Error, Result};
