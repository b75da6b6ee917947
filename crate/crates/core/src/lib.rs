//! Multi-layer clustering-based residual sparsifying transforms (MCST):
//! model training and PWLS low-dose CT reconstruction with a desk-scale
//! parallel-beam simulator and classical baselines.

pub mod config;
pub mod ct_sim;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod mcst;
pub mod patching;
pub mod recon;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
