//! Volumetric patch masking, patch embedding, 3D shifted-window attention
//! stages, patch merging, and the four-level feature pyramid.

pub mod config;
pub mod encoder;
pub mod mask;
pub mod plan;

pub use config::{EncoderConfig, NUM_STAGES};
pub use encoder::{EncodeOutput, Encoder, FeaturePyramid};
pub use mask::{apply_mask, mask_patches, MaskSpec};
