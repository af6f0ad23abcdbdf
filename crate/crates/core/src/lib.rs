//! Parametric Pareto set learning with multi-objective Bayesian optimization.

pub mod acquisition;
pub mod dynamic;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pareto;
pub mod persist;
pub mod problems;
pub mod psmodel;
pub mod report;
pub mod runner;
pub mod sampling;
pub mod scalarize;
pub mod surrogate;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
