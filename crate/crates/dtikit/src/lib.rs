//! Desk-scale diffusion tensor imaging pipeline: six-direction DWI
//! simulation, OLS tensor fitting, FA/MD/AD maps, and a small patch
//! estimator trained with a singular-value-regularized loss.
//!
//! The crate is organized around the processing chain:
//!
//! - [`volume`] / [`gradient`]: containers and on-disk formats
//! - [`dti`]: forward model, tensor fit, eigenmetrics
//! - [`phantom`] / [`noise`] / [`dataset`]: synthetic ground truth
//! - [`svd`]: Jacobi SVD, truncation, singular-value sensitivities
//! - [`quality`]: MSE / PSNR / SSIM
//! - [`loss`] / [`model`] / [`train`]: the regularized estimator

pub mod dataset;
pub mod dti;
pub mod error;
pub mod gradient;
pub mod loss;
pub mod mat;
pub mod model;
pub mod noise;
pub mod pgm;
pub mod phantom;
pub mod quality;
pub mod svd;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
