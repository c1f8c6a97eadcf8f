//! Edge regression and edge-weight classification on temporal graphs.
//!
//! The pipeline ingests a timestamped weighted edge stream, splits it
//! chronologically, normalizes weights on the training window, builds
//! training and evaluation sample sets, fits a predictor and scores it.

pub mod baselines;
pub mod edge_stream;
pub mod error;
pub mod histogram;
pub mod metrics;
pub mod normalization;
pub mod runner;
pub mod sampling;
pub mod static_collapse;
pub mod synthetic;
pub mod temporal_model;

pub use error::{Error, Result};
