//! Aerial-ground precision farming algorithm stack.
//!
//! Every stage runs on procedurally generated fields so that its output can be
//! checked against a known truth:
//!
//! - [`fieldgen`]: ground-truth fields, rasters and simulated detections
//! - [`spectral`]: vegetation indices and vegetation extraction
//! - [`rownav`]: crop-row pattern detection, row-relative EKF, geometric classifier
//! - [`posegraph`]: sliding-window multi-cue pose graph with altitude priors
//! - [`colmap`]: aerial-ground cloud registration and temporal stem registration
//! - [`ipp`]: GP terrain belief and informative path planning with CMA-ES
//! - [`mission`]: task scheduler and the UAV-UGV message protocol
//! - [`weedops`]: label validation, tool selection and trigger prediction
//! - [`scenario`] / [`runner`]: reproducible experiment files and artifact export

pub mod colmap;
pub mod error;
pub mod fieldgen;
pub mod io;
pub mod ipp;
pub mod mission;
pub mod posegraph;
pub mod rng;
pub mod rownav;
pub mod runner;
pub mod scenario;
pub mod spectral;
pub mod weedops;

pub use error::{Error, Result};
