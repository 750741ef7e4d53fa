//! Extrinsic calibration of multi-camera rigs over crowned sports fields.
//!
//! Camera poses are refined by an elitist evolution strategy that aligns
//! bird's-eye warps of line masks with a field template and with each other.

pub mod config;
pub mod evolve;
pub mod field;
pub mod fitness;
pub mod geometry;
pub mod imageio;
pub mod metrics;
pub mod raster;
pub mod pipeline;
pub mod report;
pub mod simulate;
