use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

/// Architecture hyperparameters. Every parameter shape follows from these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub s2_in_channels: usize,
    pub s1_in_channels: usize,
    pub encoder_stage_channels: [usize; 4],
    pub decoder_stage_channels: [usize; 4],
    pub input_size_px: usize,
    /// Scales every channel width; 1.0 is the full-size network.
    pub width_multiplier: f64,
    pub stem_channels: usize,
    pub blocks_per_stage: [usize; 4],
    pub decoder_kernel: usize,
    /// The head's ReLU output is multiplied by this constant, so a unit activation means this
    /// many meters. It puts initial predictions on the height scale without changing the family
    /// of functions the network can express.
    pub output_scale_m: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            s2_in_channels: 5,
            s1_in_channels: 4,
            encoder_stage_channels: [256, 512, 1024, 2048],
            decoder_stage_channels: [512, 256, 128, 64],
            input_size_px: 128,
            width_multiplier: 1.0,
            stem_channels: 64,
            blocks_per_stage: [3, 4, 6, 3],
            decoder_kernel: 3,
            output_scale_m: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn with_width(width_multiplier: f64) -> Self {
        ModelConfig { width_multiplier, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.s1_in_channels == 0 || self.s2_in_channels == 0 {
            return bad("input channel counts must be positive".into());
        }
        if self.input_size_px == 0 || self.input_size_px % 16 != 0 {
            return bad(format!("input_size_px must be a positive multiple of 16, got {}", self.input_size_px));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width_multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.encoder_stage_channels.contains(&0)
            || self.decoder_stage_channels.contains(&0)
            || self.blocks_per_stage.contains(&0)
            || self.stem_channels == 0
        {
            return bad("channel and block counts must be positive".into());
        }
        if self.decoder_kernel % 2 == 0 {
            return bad(format!("decoder_kernel must be odd, got {}", self.decoder_kernel));
        }
        if !(self.output_scale_m > 0.0 && self.output_scale_m.is_finite()) {
            return bad(format!("output_scale_m must be positive, got {}", self.output_scale_m));
        }
        Ok(())
    }

    /// A nominal width after applying the multiplier.
    pub fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Per-branch encoder output channels, one per level.
    pub fn encoder_channels(&self) -> [usize; 4] {
        self.encoder_stage_channels.map(|c| self.scaled(c))
    }

    pub fn decoder_channels(&self) -> [usize; 4] {
        self.decoder_stage_channels.map(|c| self.scaled(c))
    }

    /// Fused channels per level: both branches concatenated.
    pub fn fused_channels(&self) -> [usize; 4] {
        self.encoder_channels().map(|c| 2 * c)
    }

    /// Spatial side of encoder level `i` (0-based).
    pub fn level_size(&self, i: usize) -> usize {
        self.input_size_px >> (i + 1)
    }
}
