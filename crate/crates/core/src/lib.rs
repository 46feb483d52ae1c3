//! Online parameter identification for switched linear systems.
//!
//! The plant `ẋ = A_σ x + B_σ u` is identified subsystem by subsystem from
//! filtered regressors. Each subsystem keeps a memory stack of its filter
//! values so its estimate keeps improving while another subsystem is active.

pub mod baseline;
pub mod error;
pub mod estimator;
pub mod excitation;
pub mod filters;
pub mod harness;
pub mod identifier;
pub mod linalg;
pub mod plant;
pub mod regressor;

pub use error::{Error, Result};
