//! Neural building blocks on top of [`crate::autograd`].
//!
//! Layers are stateless functions over a [`ModelWeights`] container keyed by
//! hierarchical paths (`denoiser.decoder.stage0.conv.weight`), so models can
//! share, freeze and serialize parameters by name.

mod adam;
pub mod layers;
pub mod unet;
pub mod vit;
mod weights;

pub use adam::{grad_map, Adam, GradMap};
pub use unet::UnetConfig;
pub use vit::{vit_encode, vit_encode_layers, VitConfig};
pub use weights::{load_weights, save_weights, ModelWeights, ParamTensor, WEIGHT_MAGIC};
