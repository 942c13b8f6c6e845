//! Implicit neural representations of images fitted three ways: on pixel
//! values, on image gradients, and with an edge-oriented network whose
//! output is recalibrated by a per-channel affine tuner. Also provides
//! gradient-domain composition of two images and PSNR/SSIM evaluation.

pub mod autodiff;
pub mod error;
pub mod gma;
pub mod imageio;
pub mod linalg;
pub mod metrics;
pub mod networks;
pub mod training;

pub use error::{Error, Result};
