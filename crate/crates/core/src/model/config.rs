use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyper-parameters. Frame sizes must be divisible by 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frames per window.
    pub window: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_channels: usize,
    pub global_dim: usize,
    pub lstm_hidden: usize,
    /// Scale intermediate encoder/decoder widths with `encoder_channels`
    /// instead of using the fixed full-size widths.
    pub desk_scale: bool,
    /// Per-frame baseline: temporal features are the pooled encodings, the LSTM is bypassed.
    pub ablate_lstm: bool,
    pub init_seed: u32,
    pub extractor_seed: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_size()
    }
}

impl ModelConfig {
    /// Full-size widths: 256-channel encoder, 1000-d global embedding, 256-unit LSTM.
    pub fn full_size() -> Self {
        ModelConfig {
            window: 5,
            height: 64,
            width: 64,
            encoder_channels: 256,
            global_dim: 1000,
            lstm_hidden: 256,
            desk_scale: false,
            ablate_lstm: false,
            init_seed: 0,
            extractor_seed: 1,
        }
    }

    /// Reduced widths for tests and CPU-scale experiments.
    pub fn desk(window: usize, size: usize, channels: usize, global_dim: usize) -> Self {
        ModelConfig {
            window,
            height: size,
            width: size,
            encoder_channels: channels,
            global_dim,
            lstm_hidden: channels,
            desk_scale: true,
            ..Self::full_size()
        }
    }

    pub fn ablated(self) -> Self {
        ModelConfig {
            ablate_lstm: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(8)
            || !self.width.is_multiple_of(8)
        {
            return bad(format!(
                "frame size {}×{} must be positive and divisible by 8",
                self.height, self.width
            ));
        }
        if self.window == 0
            || self.encoder_channels == 0
            || self.global_dim == 0
            || self.lstm_hidden == 0
        {
            return bad(
                "window, encoder_channels, global_dim and lstm_hidden must be at least 1".into(),
            );
        }
        if self.ablate_lstm && self.lstm_hidden != self.encoder_channels {
            return bad(format!(
                "the LSTM-ablated model feeds pooled encodings in place of the LSTM output, \
                 so lstm_hidden ({}) must equal encoder_channels ({})",
                self.lstm_hidden, self.encoder_channels
            ));
        }
        Ok(())
    }

    /// Output widths of the six encoder convolutions.
    pub fn encoder_widths(&self) -> [usize; 6] {
        let c = self.encoder_channels;
        if self.desk_scale {
            let q = (c / 4).max(1);
            let h = (c / 2).max(1);
            [q, q, h, h, c, c]
        } else {
            [64, 64, 128, 128, c, c]
        }
    }

    /// Output widths of the three upsampling decoder stages.
    pub fn decoder_widths(&self) -> [usize; 3] {
        if self.desk_scale {
            let c = self.encoder_channels;
            [(c / 2).max(2), (c / 4).max(2), (c / 8).max(2)]
        } else {
            [128, 64, 32]
        }
    }

    /// Channels entering the fusion projection.
    pub fn fusion_channels(&self) -> usize {
        self.encoder_channels + self.global_dim + self.lstm_hidden
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_fusion_width_is_1512() {
        assert_eq!(ModelConfig::full_size().fusion_channels(), 1512);
    }

    #[test]
    fn size_must_divide_by_eight() {
        let mut c = ModelConfig::desk(5, 32, 8, 16);
        c.height = 30;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_needs_matching_widths() {
        let mut c = ModelConfig::desk(5, 32, 8, 16).ablated();
        c.lstm_hidden = 4;
        assert!(c.validate().is_err());
    }
}
