//! Joint AMD diagnosis and lesion identification from color fundus images.
//!
//! The crate covers the whole experimental pipeline: dataset ingestion and
//! grouped fold planning ([`ingestion`]), online augmentation
//! ([`augmentation`]), the multi-head network ([`model`]), the weighted
//! multi-task loss with exact gradients and Adam training ([`training`]),
//! ROC/PR evaluation with pooled operating points and activation-map export
//! ([`evaluation`]), and a synthetic dataset generator with ground-truth
//! geometry ([`synthdata`]).

pub mod augmentation;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod model;
pub mod real;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
