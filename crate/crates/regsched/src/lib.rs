//! Additive-regularization schedule search for small feed-forward
//! regression models: a composite loss assembled from a per-layer
//! regularizer catalog, metaparameter schedules (expert-set or evolved by a
//! genetic algorithm) and genetic structure pruning of trained networks.

pub mod core_math;
pub mod data;
pub mod error;
pub mod evolution;
pub mod ga_nas;
pub mod ga_reg;
pub mod metrics;
pub mod model;
pub mod regularizers;
pub mod schedule;
pub mod trainer;

pub mod experiment;
pub mod report;

pub use error::{Error, Result};
