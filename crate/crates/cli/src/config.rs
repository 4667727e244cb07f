//! Run configuration: built-in defaults, then the JSON config file, then flags.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "dataset": "data/",
//!   "output": "model.fchk",
//!   "resume": null,
//!   "log": "train.ndjson",
//!   "model": { "window": 5, "encoder_channels": 32, "global_dim": 32, "desk_scale": true },
//!   "train": { "epochs": 20, "batch_size": 8, "learning_rate": 0.001 }
//! }
//! ```
//!
//! Every key is optional. `model` accepts any [`ModelConfig`] field and
//! `train` any [`TrainConfig`] field. Missing frame sizes are taken from the
//! dataset. `seed` feeds the shuffle seed and, unless set explicitly, the
//! model's init and extractor seeds.

use std::path::{Path, PathBuf};

use flowchroma_core::model::ModelConfig;
use flowchroma_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub window: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub encoder_channels: Option<usize>,
    pub global_dim: Option<usize>,
    pub lstm_hidden: Option<usize>,
    pub desk_scale: Option<bool>,
    pub ablate_lstm: Option<bool>,
    pub init_seed: Option<u32>,
    pub extractor_seed: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub max_steps: Option<u64>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub clip_grad_norm: Option<f64>,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
    pub window_stride: Option<usize>,
}

/// Partial run description, as read from a file or collected from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
}

macro_rules! take {
    ($dst:expr, $src:expr, $($f:ident),+) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(1, format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::new(1, format!("config {}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        take!(self, flags, seed, dataset, output, resume, log);
        take!(
            self.model,
            flags.model,
            window,
            height,
            width,
            encoder_channels,
            global_dim,
            lstm_hidden,
            desk_scale,
            ablate_lstm,
            init_seed,
            extractor_seed
        );
        take!(
            self.train,
            flags.train,
            batch_size,
            validation_fraction,
            epochs,
            max_steps,
            seed,
            learning_rate,
            clip_grad_norm,
            checkpoint_every,
            checkpoint_dir,
            window_stride
        );
        self
    }

    pub fn has_model_settings(&self) -> bool {
        self.model != ModelOverrides::default()
    }

    /// Concrete model config for frames of `dims` unless sizes were given.
    pub fn model_config(&self, dims: (usize, usize)) -> ModelConfig {
        let m = &self.model;
        let mut c = ModelConfig::full_size();
        let seed = self.seed.map(|s| s as u32);
        c.window = m.window.unwrap_or(c.window);
        c.height = m.height.unwrap_or(dims.0);
        c.width = m.width.unwrap_or(dims.1);
        c.encoder_channels = m.encoder_channels.unwrap_or(c.encoder_channels);
        c.global_dim = m.global_dim.unwrap_or(c.global_dim);
        c.lstm_hidden = m.lstm_hidden.unwrap_or(c.encoder_channels);
        c.desk_scale = m.desk_scale.unwrap_or(c.desk_scale);
        c.ablate_lstm = m.ablate_lstm.unwrap_or(c.ablate_lstm);
        c.init_seed = m.init_seed.or(seed).unwrap_or(c.init_seed);
        c.extractor_seed = m.extractor_seed.or(seed).unwrap_or(c.extractor_seed);
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::default();
        TrainConfig {
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            validation_fraction: t.validation_fraction.unwrap_or(d.validation_fraction),
            epochs: t.epochs.unwrap_or(d.epochs),
            max_steps: t.max_steps.or(d.max_steps),
            seed: t.seed.or(self.seed).unwrap_or(d.seed),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            clip_grad_norm: t.clip_grad_norm.or(d.clip_grad_norm),
            checkpoint_every: t.checkpoint_every.or(d.checkpoint_every),
            checkpoint_dir: t.checkpoint_dir.clone().or(d.checkpoint_dir),
            window_stride: t.window_stride.unwrap_or(d.window_stride),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win() {
        let file: RunConfig = serde_json::from_str(
            r#"{"seed": 3, "model": {"window": 4, "global_dim": 9}, "train": {"epochs": 5, "learning_rate": 0.01}}"#,
        )
        .unwrap();
        let mut flags = RunConfig::default();
        flags.model.window = Some(6);
        flags.train.epochs = Some(1);
        let merged = file.overlay(&flags);
        let m = merged.model_config((16, 24));
        assert_eq!((m.window, m.global_dim, m.height, m.width), (6, 9, 16, 24));
        assert_eq!((m.init_seed, m.extractor_seed), (3, 3));
        let t = merged.train_config();
        assert_eq!((t.epochs, t.learning_rate, t.seed), (1, 0.01, 3));
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn lstm_hidden_follows_channels() {
        let mut r = RunConfig::default();
        r.model.encoder_channels = Some(12);
        assert_eq!(r.model_config((8, 8)).lstm_hidden, 12);
    }
}
