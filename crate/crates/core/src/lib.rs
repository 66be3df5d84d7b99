//! Event conditional correlation: estimation, inference, simulation studies
//! and applications (segmented regression, dependence tests, networks).

pub mod deptest;
pub mod error;
pub mod estimators;
pub mod events;
pub mod inference;
pub mod mc;
pub mod network;
pub mod optim;
pub mod regression;
pub mod sample;
pub mod stats;
pub mod synth;

mod par;

pub use error::{EccError, Result};
pub use estimators::{
    ecc_estimate, ecc_estimate_with, ecc_population, ecc_subsample, implied_unconditional, CorrelationParams,
    EccEstimate, EstimateMethod, MomentSource, MomentStrategy,
};
pub use events::EventSpec;
pub use sample::{Roles, Sample};
