//! Unrolled multi-coil MRI reconstruction.
//!
//! The crate is organised bottom-up:
//!
//! * [`physics`]: centered orthonormal FFTs, Cartesian sampling masks, coil
//!   expand/reduce and the undersampled multi-coil forward model.
//! * [`autograd`] and [`nn`]: a small reverse-mode tape, neural layers, a
//!   configurable ViT encoder, Adam and the weight file format.
//! * [`denoiser`]: image-domain denoisers, most notably the frozen-encoder
//!   multi-layer fusion denoiser with a hierarchical convolutional decoder.
//! * [`recon`]: sensitivity estimation, the k-space cascade update and training.
//! * [`metrics`]: SSIM, PSNR, NMSE and the differentiable SSIM loss.
//! * [`data`]: synthetic phantoms, coil simulation, dataset manifests and the
//!   k-space volume file format.

pub mod autograd;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod physics;
mod real;
pub mod recon;

pub use error::{Error, Result};
pub use real::Real;
