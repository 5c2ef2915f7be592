//! Masked-autoencoder pretraining on radiance-and-density voxel grids.
//!
//! The pipeline runs end to end at desk scale: fit small radiance fields to
//! posed RGB images of synthetic scenes, extract canonical
//! radiance-and-density grids, pretrain a 3D shifted-window masked
//! autoencoder with an opacity-aware reconstruction loss, and fine-tune the
//! encoder on voxel labeling, super-resolution, and 3D box detection.

pub mod autodiff;
pub mod grid;
pub mod scene;
pub mod swin;
pub mod error;
pub mod par;

pub use error::{Error, Result};
