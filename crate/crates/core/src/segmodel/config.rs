use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Dice,
    /// Cross-entropy plus soft Dice, equally weighted.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: String,
    pub decoder: String,
    pub in_channels: usize,
    pub classes: usize,
    /// Channels of the first encoder stage; later stages double it.
    pub encoder_width: usize,
    /// Output channels of each pyramid-pooling branch.
    pub pyramid_channels: usize,
    /// Bottleneck output followed by the five upsampling stages (1/16 .. 1/1).
    pub decoder_channels: [usize; 6],
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Share of the training patches held out for checkpoint selection.
    pub holdout_fraction: f64,
}

pub const ENCODER: &str = "resnet18-topology";
pub const DECODER: &str = "pyramid-pooling";
pub const PYRAMID_BINS: [usize; 4] = [1, 2, 3, 6];

impl ModelConfig {
    fn preset(width: usize, pyramid: usize, decoder: [usize; 6]) -> Self {
        Self {
            encoder: ENCODER.into(),
            decoder: DECODER.into(),
            in_channels: 3,
            classes: 2,
            encoder_width: width,
            pyramid_channels: pyramid,
            decoder_channels: decoder,
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 20,
            loss: LossKind::Combined,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }

    /// Standard ResNet-18 widths (64..512).
    pub fn full() -> Self {
        Self::preset(64, 128, [256, 128, 64, 64, 32, 16])
    }

    /// Same topology at a quarter of the width.
    pub fn reduced() -> Self {
        Self::preset(16, 16, [64, 32, 32, 16, 16, 8])
    }

    /// Minimal widths for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self::preset(4, 4, [8, 8, 8, 8, 8, 4])
    }

    pub fn preset_named(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "reduced" => Some(Self::reduced()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// True when both configs build the same network (training settings may differ).
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        (&self.encoder, &self.decoder, self.in_channels, self.classes, self.encoder_width, self.pyramid_channels, self.decoder_channels)
            == (&other.encoder, &other.decoder, other.in_channels, other.classes, other.encoder_width, other.pyramid_channels, other.decoder_channels)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.encoder != ENCODER {
            return bad(format!("unsupported encoder {:?}", self.encoder));
        }
        if self.decoder != DECODER {
            return bad(format!("unsupported decoder {:?}", self.decoder));
        }
        if self.in_channels != 3 {
            return bad(format!("in_channels must be 3, got {}", self.in_channels));
        }
        if self.classes != 2 {
            return bad(format!("classes must be 2, got {}", self.classes));
        }
        if self.encoder_width == 0 || self.pyramid_channels == 0 || self.decoder_channels.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout_fraction must lie in [0, 1), got {}", self.holdout_fraction));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reduced()
    }
}
