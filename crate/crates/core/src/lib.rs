//! Doubly robust estimation of average treatment effects when outcome labels
//! are missing at random with a labeling probability that may decay with the
//! sample size.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod model;
pub mod nuisance;
pub mod rng;
pub mod simulate;
pub mod solvers;

pub use error::{Error, Result};
