//! Micro-FTIR hyperspectral analysis: tissue/paraffin segmentation,
//! chemometric preprocessing, a residual 1D CNN classifier with its own
//! training engine, patient-level evaluation and 1D Grad-CAM.

pub mod chemometrics;
pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcam;
pub mod labels;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
