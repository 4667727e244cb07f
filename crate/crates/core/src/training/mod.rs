//! Chroma regression objective, Adam and the training loop.

mod adam;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};

use crate::data::{self, DataError, LabVideoClip};
use crate::model::{Checkpoint, FlowChromaModel, ModelError};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("clip {clip}: {msg}")]
    Clip { clip: String, msg: String },
    #[error("batch contains no losses")]
    EmptyBatch,
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("loss became non-finite at step {0}")]
    NonFiniteLoss(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Mean squared error over every entry of two `T×H×W×2` chroma tensors.
///
/// Differentiable: if `pred` is tracked the result is a tape node.
pub fn video_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let s = pred.shape();
    if s != target.shape() || s.len() != 4 || s[3] != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "video_loss",
            lhs: s.to_vec(),
            rhs: target.shape().to_vec(),
        }
        .into());
    }
    let d = pred.sub(target)?;
    Ok(d.mul(&d)?.mean()?)
}

/// Arithmetic mean of per-clip scalar losses.
pub fn batch_loss(losses: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = losses.split_first().ok_or(TrainError::EmptyBatch)?;
    if let Some(bad) = losses.iter().find(|l| !l.is_scalar()) {
        return Err(TensorError::InvalidArgument {
            op: "batch_loss",
            msg: format!(
                "per-clip losses must be scalars, got shape {:?}",
                bad.shape()
            ),
        }
        .into());
    }
    let mut total = first.clone();
    for l in rest {
        total = total.add(l)?;
    }
    Ok(total.mul_scalar(1.0 / losses.len() as f64)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Total epochs, counted from step 0 (a resumed run stops at the same place).
    pub epochs: usize,
    /// Optional cap on the total optimizer step count.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub learning_rate: f64,
    /// Rescale the averaged gradient to this global L2 norm when exceeded.
    pub clip_grad_norm: Option<f64>,
    /// Write `step_XXXXXXXX.fchk` into `checkpoint_dir` every this many steps.
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Offset between consecutive training windows cut from one clip.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            validation_fraction: 0.1,
            epochs: 10,
            max_steps: None,
            seed: 0,
            learning_rate: 1e-4,
            clip_grad_norm: None,
            checkpoint_every: None,
            checkpoint_dir: None,
            window_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie strictly between 0 and 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.clip_grad_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("clip_grad_norm must be positive");
        }
        if self.window_stride == 0 {
            return bad("window_stride must be at least 1");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be at least 1");
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return bad("checkpoint_every needs checkpoint_dir");
        }
        Ok(())
    }
}

/// Clip indices `(train, validation)`. The validation set is the tail of a
/// seeded shuffle, `round(n·fraction)` clips but never all of them.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let val = order.split_off(n - n_val);
    (order, val)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Loss of one optimizer step's batch.
    Train,
    /// Mean training-batch loss over an epoch.
    TrainEpoch,
    /// Mean validation loss at the end of an epoch.
    Val,
}

/// One line of the training log. Field order is fixed:
/// `step, epoch, split, loss, wall_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub records: Vec<LogRecord>,
    pub steps_run: u64,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainSummary {
    pub fn train_losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.loss)
            .collect()
    }
}

/// One training window: normalized luminance input and chroma target.
type Example = (Tensor, Tensor);

#[derive(Debug, Clone)]
pub struct Trainer {
    model: FlowChromaModel,
    adam: AdamState,
    step: u64,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: FlowChromaModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(
            model.params(),
            AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            model,
            adam,
            step: 0,
            cfg,
        })
    }

    /// Continues from a checkpoint. Optimizer moments are restored when the
    /// checkpoint carries them, otherwise they restart at zero.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let model = ck.to_model()?;
        let mut trainer = Trainer::new(model, cfg)?;
        trainer.step = ck.step;
        trainer.adam.restore(trainer.model.params(), ck)?;
        Ok(trainer)
    }

    pub fn model(&self) -> &FlowChromaModel {
        &self.model
    }

    pub fn into_model(self) -> FlowChromaModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Model weights, extractor weights and optimizer moments.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(self.step);
        self.adam.append_records(self.model.params(), &mut ck);
        ck
    }

    fn examples(&self, clips: &[LabVideoClip], idx: &[usize]) -> Result<Vec<Example>> {
        let cfg = self.model.config();
        let mut out = Vec::new();
        for &i in idx {
            let clip = &clips[i];
            if clip.height() != cfg.height || clip.width() != cfg.width || clip.len() < cfg.window {
                return Err(TrainError::Clip {
                    clip: clip.source_id.clone(),
                    msg: format!(
                        "{} frames of {}×{} do not fit a {}-frame {}×{} model",
                        clip.len(),
                        clip.height(),
                        clip.width(),
                        cfg.window,
                        cfg.height,
                        cfg.width
                    ),
                });
            }
            out.extend(data::training_examples(
                clip,
                cfg.window,
                self.cfg.window_stride,
            )?);
        }
        Ok(out)
    }

    /// Loss and per-parameter gradient for one example on its own tape.
    pub fn example_gradient(
        &self,
        lum: &Tensor,
        target: &Tensor,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let tape = Tape::new();
        let params = self.model.params().bind(&tape);
        let pred = self.model.forward_with(&params, lum)?;
        let loss = video_loss(&pred, target)?;
        let value = loss.item();
        let grads = loss.backward()?;
        let per_param = params
            .iter()
            .map(|p| grads.get(p).map(|g| g.to_vec()))
            .collect();
        Ok((value, per_param))
    }

    /// Batch loss and in-order averaged gradient.
    fn batch_gradient(&self, batch: &[&Example]) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let results = batch
            .par_iter()
            .map(|(lum, target)| self.example_gradient(lum, target))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let mut loss = 0.0;
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.model.params().len()];
        for (l, grads) in results {
            loss += l;
            for (slot, g) in acc.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (Some(s), Some(g)) => s.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    (None, Some(g)) => *slot = Some(g),
                    (_, None) => {}
                }
            }
        }
        for g in acc.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v /= n);
        }
        Ok((loss / n, acc))
    }

    fn clip_norm(&self, grads: &mut [Option<Vec<f64>>]) {
        let Some(max) = self.cfg.clip_grad_norm else {
            return;
        };
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max {
            let s = max / norm;
            for g in grads.iter_mut().flatten() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Mean video loss over `examples` with the current weights.
    pub fn evaluate_loss(&self, examples: &[Example]) -> Result<f64> {
        let losses = examples
            .par_iter()
            .map(|(lum, target)| Ok(video_loss(&self.model.forward(lum)?, target)?.item()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("step_{:08}.fchk", self.step));
        self.checkpoint().save(&path)?;
        Ok(path)
    }

    /// Trains until `epochs` or `max_steps` is reached, writing one JSON
    /// record per line to `log`.
    ///
    /// Example order within epoch `e` is a shuffle seeded by `(seed, e)`, so a
    /// run resumed from a checkpoint at step `s` replays the same batches as
    /// an uninterrupted run from step `s` on.
    pub fn train(&mut self, clips: &[LabVideoClip], log: &mut dyn Write) -> Result<TrainSummary> {
        if clips.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let start = Instant::now();
        let (train_idx, val_idx) =
            split_indices(clips.len(), self.cfg.validation_fraction, self.cfg.seed);
        let train = self.examples(clips, &train_idx)?;
        let val = self.examples(clips, &val_idx)?;
        let steps_per_epoch = train.len().div_ceil(self.cfg.batch_size) as u64;
        let mut total = self.cfg.epochs as u64 * steps_per_epoch;
        if let Some(m) = self.cfg.max_steps {
            total = total.min(m);
        }
        let mut summary = TrainSummary::default();
        let mut emit = |summary: &mut TrainSummary, rec: LogRecord| -> Result<()> {
            serde_json::to_writer(&mut *log, &rec).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
            summary.records.push(rec);
            Ok(())
        };
        while self.step < total {
            let epoch = (self.step / steps_per_epoch) as usize;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(
                self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ));
            let first_batch = (self.step % steps_per_epoch) as usize;
            let mut epoch_losses = Vec::new();
            for chunk in order.chunks(self.cfg.batch_size).skip(first_batch) {
                if self.step >= total {
                    break;
                }
                let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
                let (loss, mut grads) = self.batch_gradient(&batch)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss(self.step + 1));
                }
                self.clip_norm(&mut grads);
                self.adam.step(self.model.params_mut(), &grads)?;
                self.step += 1;
                summary.steps_run += 1;
                epoch_losses.push(loss);
                emit(
                    &mut summary,
                    LogRecord {
                        step: self.step,
                        epoch,
                        split: Split::Train,
                        loss,
                        wall_ms: start.elapsed().as_millis() as u64,
                    },
                )?;
                if let (Some(every), Some(dir)) =
                    (self.cfg.checkpoint_every, self.cfg.checkpoint_dir.clone())
                {
                    if self.step.is_multiple_of(every) {
                        summary.checkpoints.push(self.save_checkpoint(&dir)?);
                    }
                }
            }
            if self.step.is_multiple_of(steps_per_epoch) {
                let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64;
                let mut records = vec![(Split::TrainEpoch, mean)];
                if !val.is_empty() {
                    records.push((Split::Val, self.evaluate_loss(&val)?));
                }
                for (split, loss) in records {
                    emit(
                        &mut summary,
                        LogRecord {
                            step: self.step,
                            epoch,
                            split,
                            loss,
                            wall_ms: start.elapsed().as_millis() as u64,
                        },
                    )?;
                }
            }
        }
        log.flush()?;
        Ok(summary)
    }
}

/// Trains a fresh optimizer on `model` and returns the updated model.
pub fn train(
    model: FlowChromaModel,
    clips: &[LabVideoClip],
    cfg: TrainConfig,
    log: &mut dyn Write,
) -> Result<(FlowChromaModel, TrainSummary)> {
    let mut trainer = Trainer::new(model, cfg)?;
    let summary = trainer.train(clips, log)?;
    Ok((trainer.into_model(), summary))
}
