//! Canopy height mapping from LiDAR and 4-band satellite imagery.
//!
//! The pipeline runs LiDAR point clouds through denoising, ground
//! classification and surface interpolation to a canopy height model
//! ([`lidar`]), pairs it with imagery into weighted training patches
//! ([`dataset`]), trains a U-Net regressor ([`nn`]), predicts full tiles with
//! mirrored borders ([`inference`]), composites multi-date predictions
//! ([`composite`]), and analyses change over time ([`change`],
//! [`evaluation`]).

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod change;
pub mod composite;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod lidar;
pub mod nn;
mod par;
pub mod raster;

pub mod synth;

pub use error::{Error, Result};
