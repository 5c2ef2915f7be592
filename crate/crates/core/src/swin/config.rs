//! Encoder hyperparameters.

use crate::error::{Error, Result};

pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Embedding dimension at stage 0.
    pub embed_dim: usize,
    pub depths: [usize; NUM_STAGES],
    pub heads: [usize; NUM_STAGES],
    /// Window edge length (clamped per stage to the token extent).
    pub window: usize,
    /// Patch edge length for embedding.
    pub patch: usize,
    /// Input grid channels.
    pub in_channels: usize,
}

impl EncoderConfig {
    /// Full-scale configuration: 96-dim embedding, heads [3,6,12,24], W=4, p=4.
    pub fn paper() -> Self {
        EncoderConfig {
            embed_dim: 96,
            depths: [2, 2, 18, 2],
            heads: [3, 6, 12, 24],
            window: 4,
            patch: 4,
            in_channels: 4,
        }
    }

    /// Small configuration for 32-cubed grids; identical shape rules.
    pub fn desk() -> Self {
        EncoderConfig {
            embed_dim: 16,
            depths: [2, 2, 2, 2],
            heads: [1, 2, 4, 8],
            window: 4,
            patch: 4,
            in_channels: 4,
        }
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Token extents at a stage for a given grid resolution.
    pub fn stage_dims(&self, resolution: [usize; 3], stage: usize) -> [usize; 3] {
        let mut d = [0; 3];
        for a in 0..3 {
            d[a] = resolution[a] / self.patch / (1 << stage);
        }
        d
    }

    pub fn validate(&self, resolution: [usize; 3]) -> Result<()> {
        if self.window == 0 || self.patch == 0 || self.embed_dim == 0 {
            return Err(Error::Config("window, patch, embed_dim must be positive".into()));
        }
        // patch embedding plus three patch mergings: extents must divide by
        // patch * 2^3 so every merged stage keeps integral extents
        for (axis, &r) in resolution.iter().enumerate() {
            if r % (self.patch * 8) != 0 {
                return Err(Error::Config(format!(
                    "grid extent {r} on axis {axis} must be divisible by patch*8 = {}",
                    self.patch * 8
                )));
            }
        }
        let stage1 = self.stage_dims(resolution, 0);
        for (axis, &t) in stage1.iter().enumerate() {
            if t > self.window && t % self.window != 0 {
                return Err(Error::Config(format!(
                    "stage-1 token extent {t} on axis {axis} not divisible by window {}",
                    self.window
                )));
            }
        }
        for s in 0..NUM_STAGES {
            let c = self.stage_channels(s);
            if c % self.heads[s] != 0 {
                return Err(Error::Config(format!(
                    "stage {s}: heads {} do not divide channels {c}",
                    self.heads[s]
                )));
            }
        }
        Ok(())
    }

    /// Stable hash of the configuration, embedded in checkpoints.
    pub fn config_key(&self, resolution: [usize; 3]) -> String {
        format!(
            "swin3d:e{};d{:?};h{:?};w{};p{};c{};r{:?}",
            self.embed_dim,
            self.depths,
            self.heads,
            self.window,
            self.patch,
            self.in_channels,
            resolution
        )
    }
}
