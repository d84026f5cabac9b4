//! Parameter-randomization sensitivity testing for saliency explainers.
//!
//! Trains small CNNs, explains their predictions with seven saliency
//! methods, randomizes one parameter layer at a time and scores how much
//! each explanation changes (1 − SSIM), aggregated per image and per
//! dataset against a 0.01 threshold.

pub mod error;
pub mod exec;
pub mod explain;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod report;
pub mod zoo;

pub use error::{Error, Result};
