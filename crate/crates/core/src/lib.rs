//! Scene-landmark LiDAR global localization on bird's-eye-view density images.
//!
//! A small detector network and a set of learnable global landmark
//! coordinates are trained jointly from a posed reference sequence. At query
//! time the network's heatmap peaks are paired with landmarks through the
//! correspondence head, and RANSAC recovers the planar pose.

pub mod bev;
pub mod bundle;
pub mod cli;
mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod landmarks;
pub mod localizer;
pub mod loss;
pub mod model;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
