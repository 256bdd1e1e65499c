//! Volumetric U-Net regressors with z-collapse heads.
//!
//! Tensors are `(n, c, x, y, z)`; networks map `(n, |pols|, W, W, 36)`
//! patches to `(n, 1, W, W, 1)` height maps.

pub mod blocks;
pub mod checkpoint;
pub mod heads;
pub mod layers;
pub mod tensor;
pub mod unet;

pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use heads::{CollapseHead, CollapseKind, HEAD_Z};
pub use layers::{Ctx, Layer, Mode, Param};
pub use tensor::Tensor;
pub use unet::{build_model, masked_mse, Backbone, ModelSpec, VolNet};
