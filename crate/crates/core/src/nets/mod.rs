//! Trainable networks: per-instrument separation U-Nets, feature extractors,
//! the disentangled extractor with its reconstruction decoders, and the
//! conditioning masks.

mod conditioning;
mod frontend;
mod model;
mod params;
mod unet;

use serde::{Deserialize, Serialize};

pub use conditioning::{conditioning_1d, conditioning_1d_vec, conditioning_3d};
pub use frontend::Frontend;
pub use model::{DirectOutput, Family, InMsrl, DIRECT_PREFIX, EXT_PREFIX, MSS_PREFIX, RECON_PREFIX};
pub use params::{load_checkpoint, save_checkpoint, CheckpointMeta, ParamStore};
pub use unet::{Decoder, Encoder};

use crate::error::{Error, Result};

/// Per-instrument embedding size.
pub const EMBED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub kernel: usize,
    /// Encoder widths of separation U-Nets and feature extractors.
    pub channels: Vec<usize>,
    /// Encoder widths of the disentangled extractor; the last must be
    /// divisible by 5.
    pub direct_channels: Vec<usize>,
    pub embed_dim: usize,
}

impl ModelConfig {
    /// Full-size configuration: 44.1 kHz, 2048/512 STFT, 259 mels, six
    /// layers of 16 to 512 channels.
    pub fn full() -> Self {
        Self {
            sample_rate: 44_100,
            window: 2048,
            hop: 512,
            n_mels: 259,
            kernel: 5,
            channels: vec![16, 32, 64, 128, 256, 512],
            direct_channels: vec![20, 40, 80, 160, 320, 640],
            embed_dim: EMBED_DIM,
        }
    }

    /// Reduced configuration that trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            sample_rate: 4000,
            window: 256,
            hop: 64,
            n_mels: 48,
            kernel: 5,
            channels: vec![8, 16, 32],
            direct_channels: vec![10, 20, 40],
            embed_dim: EMBED_DIM,
        }
    }

    /// Two-layer configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            sample_rate: 4000,
            window: 64,
            hop: 16,
            n_mels: 16,
            kernel: 3,
            channels: vec![4, 8],
            direct_channels: vec![5, 10],
            embed_dim: 8,
        }
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels.is_empty() || self.direct_channels.is_empty() {
            return bad("channel lists must be non-empty");
        }
        if self.channels.contains(&0) || self.direct_channels.contains(&0) {
            return bad("channel counts must be positive");
        }
        if self.direct_channels.last().is_some_and(|c| c % 5 != 0) {
            return bad("last direct channel count must be divisible by 5");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel size must be odd");
        }
        if self.embed_dim == 0 || self.n_mels == 0 {
            return bad("embed_dim and n_mels must be positive");
        }
        crate::dsp::StftConfig::new(self.window, self.hop)?;
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
