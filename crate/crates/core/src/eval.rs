//! Temporal-coherence and chroma-accuracy metrics, and model comparison reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{self, ColorError, CHROMA_SCALE};
use crate::data::LabVideoClip;
use crate::inference::{colorize_video, plan_windows, AssignmentRule};
use crate::model::{FlowChromaModel, ModelError};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_STATIC_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("clip {0} has a single frame; temporal metrics need at least two")]
    SingleFrame(String),
    #[error("{0}")]
    Dims(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// `N−1` masks over `H·W` pixels: `true` where `|L(t+1) − L(t)| < threshold`.
pub fn static_mask(clip: &LabVideoClip, threshold: f64) -> Result<Vec<Vec<bool>>> {
    if clip.len() < 2 {
        return Err(EvalError::SingleFrame(clip.source_id.clone()));
    }
    Ok(clip
        .frames()
        .windows(2)
        .map(|w| {
            w[0].l
                .iter()
                .zip(&w[1].l)
                .map(|(a, b)| (b - a).abs() < threshold)
                .collect()
        })
        .collect())
}

/// Flicker of a prediction: per consecutive pair and pooled over all pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flicker {
    /// Mean a*b* distance over every masked pixel of every pair; `None`
    /// when no pixel is static.
    pub index: Option<f64>,
    /// One entry per frame pair, `None` where that pair has no static pixel.
    pub series: Vec<Option<f64>>,
}

/// Mean `√(Δa² + Δb²)` between consecutive frames of normalized
/// `N×H×W×2` chroma, over masked pixels, in a*b* units.
pub fn flicker_index(pred: &Tensor, masks: &[Vec<bool>]) -> Result<Flicker> {
    let s = pred.shape();
    if s.len() != 4 || s[3] != 2 || s[0] < 2 {
        return Err(EvalError::Dims(format!(
            "flicker needs N×H×W×2 chroma with N ≥ 2, got {s:?}"
        )));
    }
    let (n, hw) = (s[0], s[1] * s[2]);
    if masks.len() != n - 1 || masks.iter().any(|m| m.len() != hw) {
        return Err(EvalError::Dims(format!(
            "expected {} masks of {hw} pixels for {n} frames",
            n - 1
        )));
    }
    let d = pred.data();
    let mut total = 0.0;
    let mut count = 0usize;
    let series = masks
        .iter()
        .enumerate()
        .map(|(t, mask)| {
            let (a, b) = (
                &d[t * hw * 2..(t + 1) * hw * 2],
                &d[(t + 1) * hw * 2..(t + 2) * hw * 2],
            );
            let mut sum = 0.0;
            let mut k = 0;
            for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                let da = (b[2 * i] - a[2 * i]) * CHROMA_SCALE;
                let db = (b[2 * i + 1] - a[2 * i + 1]) * CHROMA_SCALE;
                sum += (da * da + db * db).sqrt();
                k += 1;
            }
            total += sum;
            count += k;
            (k > 0).then(|| sum / k as f64)
        })
        .collect();
    Ok(Flicker {
        index: (count > 0).then(|| total / count as f64),
        series,
    })
}

/// Mean squared normalized-chroma error per frame and over the whole clip.
fn chroma_errors(pred: &Tensor, target: &Tensor) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "chroma_mse",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }
        .into());
    }
    let n = pred.shape()[0];
    let per = pred.numel() / n;
    let sq: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    let series = sq
        .chunks(per)
        .map(|c| c.iter().sum::<f64>() / per as f64)
        .collect();
    let total = sq.iter().sum::<f64>() / sq.len() as f64;
    Ok((total, series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub model_id: String,
    pub clip_id: String,
    pub flicker_index: Option<f64>,
    /// Same formula as the training loss, over normalized chroma.
    pub chroma_mse: f64,
    pub flicker_series: Vec<Option<f64>>,
    pub chroma_mse_series: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub stride: usize,
    pub static_threshold: f64,
    pub rule: AssignmentRule,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            stride: 1,
            static_threshold: DEFAULT_STATIC_THRESHOLD,
            rule: AssignmentRule::default(),
        }
    }
}

/// Scores a chroma prediction for `clip` against its ground truth.
pub fn score_prediction(
    model_id: &str,
    clip: &LabVideoClip,
    pred: &Tensor,
    static_threshold: f64,
) -> Result<CoherenceReport> {
    let (_, target) = colorspace::split_luminance(clip)?;
    let flicker = flicker_index(pred, &static_mask(clip, static_threshold)?)?;
    let (chroma_mse, chroma_mse_series) = chroma_errors(pred, &target)?;
    Ok(CoherenceReport {
        model_id: model_id.to_string(),
        clip_id: clip.source_id.clone(),
        flicker_index: flicker.index,
        chroma_mse,
        flicker_series: flicker.series,
        chroma_mse_series,
    })
}

/// Colorizes the grayscale of `clip` with sliding windows and scores it.
pub fn evaluate_clip(
    model: &FlowChromaModel,
    model_id: &str,
    clip: &LabVideoClip,
    opts: EvalOptions,
) -> Result<CoherenceReport> {
    let cfg = model.config();
    if clip.height() != cfg.height || clip.width() != cfg.width {
        return Err(EvalError::Dims(format!(
            "clip {} is {}×{} but the model expects {}×{}",
            clip.source_id,
            clip.height(),
            clip.width(),
            cfg.height,
            cfg.width
        )));
    }
    let (lum, _) = colorspace::split_luminance(clip)?;
    let pred = colorize_video(
        model,
        &lum,
        &plan_windows(clip.len(), cfg.window, opts.stride).with_rule(opts.rule),
    )?;
    score_prediction(model_id, clip, &pred, opts.static_threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    /// Mean over clips where flicker is defined; `None` if it is defined for none.
    pub mean_flicker_index: Option<f64>,
    pub mean_chroma_mse: f64,
    pub defined_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    /// One report per model, in `models` order.
    pub reports: Vec<CoherenceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<String>,
    pub clips: Vec<ClipMetrics>,
    pub summary: Vec<ModelSummary>,
}

/// Evaluates both models on every clip.
pub fn compare(
    a: (&str, &FlowChromaModel),
    b: (&str, &FlowChromaModel),
    clips: &[LabVideoClip],
    opts: EvalOptions,
) -> Result<ComparisonReport> {
    let (ca, cb) = (a.1.config(), b.1.config());
    if (ca.height, ca.width) != (cb.height, cb.width) {
        return Err(EvalError::Dims(format!(
            "models disagree on frame size: {}×{} vs {}×{}",
            ca.height, ca.width, cb.height, cb.width
        )));
    }
    let models = [a, b];
    let rows = clips
        .par_iter()
        .map(|clip| {
            let reports = models
                .iter()
                .map(|(id, m)| evaluate_clip(m, id, clip, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClipMetrics {
                clip_id: clip.source_id.clone(),
                reports,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = models
        .iter()
        .enumerate()
        .map(|(k, (id, _))| summarize(id, rows.iter().map(|r| &r.reports[k])))
        .collect();
    Ok(ComparisonReport {
        models: models.iter().map(|(id, _)| id.to_string()).collect(),
        clips: rows,
        summary,
    })
}

pub fn summarize<'a>(
    model_id: &str,
    reports: impl Iterator<Item = &'a CoherenceReport>,
) -> ModelSummary {
    let reports: Vec<_> = reports.collect();
    let defined: Vec<f64> = reports.iter().filter_map(|r| r.flicker_index).collect();
    ModelSummary {
        model_id: model_id.to_string(),
        mean_flicker_index: (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        mean_chroma_mse: reports.iter().map(|r| r.chroma_mse).sum::<f64>()
            / reports.len().max(1) as f64,
        defined_clips: defined.len(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl ComparisonReport {
    /// True when flicker is undefined for every clip under every model.
    pub fn all_undefined(&self) -> bool {
        self.summary.iter().all(|s| s.defined_clips == 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per clip, flicker and MSE per model, then means.
    pub fn to_table(&self) -> String {
        let mut header = vec!["clip".to_string()];
        for m in &self.models {
            header.push(format!("flicker[{m}]"));
            header.push(format!("mse[{m}]"));
        }
        let mut rows = vec![header];
        for c in &self.clips {
            let mut row = vec![c.clip_id.clone()];
            for r in &c.reports {
                row.push(fmt_opt(r.flicker_index));
                row.push(format!("{:.6}", r.chroma_mse));
            }
            rows.push(row);
        }
        let mut mean = vec!["mean".to_string()];
        for s in &self.summary {
            mean.push(fmt_opt(s.mean_flicker_index));
            mean.push(format!("{:.6}", s.mean_chroma_mse));
        }
        rows.push(mean);
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            if i == rows.len() - 1 || i == 1 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                writeln!(out, "{}", rule.join("  ")).unwrap();
            }
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| {
                    if j == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, SceneObject, Shape, SyntheticSceneSpec};
    use crate::model::ModelConfig;
    use crate::nn::FanInUniform;
    use crate::training::video_loss;

    fn disk_clip(noise: f64) -> (SyntheticSceneSpec, LabVideoClip) {
        let spec = SyntheticSceneSpec {
            height: 24,
            width: 24,
            frames: 4,
            background: [0.4, 0.5, 0.3],
            objects: vec![SceneObject {
                shape: Shape::Disk { radius: 4.0 },
                color: [0.9, 0.1, 0.2],
                position: [8.0, 12.0],
                velocity: [2.0, 0.0],
            }],
            cuts: vec![],
            noise,
            seed: 3,
            fps: 10.0,
        };
        let clip = generate_clip(&spec).unwrap();
        (spec, clip)
    }

    #[test]
    fn static_clip_mask_is_all_true() {
        let (mut spec, _) = disk_clip(0.0);
        spec.objects[0].velocity = [0.0, 0.0];
        let clip = generate_clip(&spec).unwrap();
        let m = static_mask(&clip, 1.0).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().flatten().all(|v| *v));
    }

    #[test]
    fn moving_disk_mask_matches_geometry() {
        let (spec, clip) = disk_clip(0.0);
        let masks = static_mask(&clip, 1.0).unwrap();
        let inside = |x: f64, y: f64, t: usize| {
            let c = spec.object_center(&spec.objects[0], t);
            let (dx, dy) = (x + 0.5 - c[0], y + 0.5 - c[1]);
            dx * dx + dy * dy <= 16.0
        };
        for (t, m) in masks.iter().enumerate() {
            for y in 0..24 {
                for x in 0..24 {
                    let changed =
                        inside(x as f64, y as f64, t) != inside(x as f64, y as f64, t + 1);
                    assert_eq!(m[y * 24 + x], !changed, "pair {t} at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn zero_threshold_is_all_false() {
        let (_, clip) = disk_clip(0.05);
        assert!(static_mask(&clip, 0.0)
            .unwrap()
            .iter()
            .flatten()
            .all(|v| !*v));
    }

    #[test]
    fn single_frame_is_rejected() {
        let (_, clip) = disk_clip(0.0);
        assert!(static_mask(&clip.window(0, 1).unwrap(), 1.0).is_err());
    }

    fn all_true(n: usize, hw: usize) -> Vec<Vec<bool>> {
        vec![vec![true; hw]; n - 1]
    }

    #[test]
    fn constant_prediction_has_zero_flicker() {
        let frame = FanInUniform::new(1).sample(&[1, 3, 3, 2], 1);
        let pred = Tensor::concat(&[frame.clone(), frame.clone(), frame], 0).unwrap();
        assert_eq!(
            flicker_index(&pred, &all_true(3, 9)).unwrap().index,
            Some(0.0)
        );
    }

    #[test]
    fn alternating_sign_gives_256() {
        let data: Vec<f64> = (0..4)
            .flat_map(|t| [if t % 2 == 0 { 1.0 } else { -1.0 }, 0.0].repeat(4))
            .collect();
        let pred = Tensor::new(&[4, 2, 2, 2], data).unwrap();
        let f = flicker_index(&pred, &all_true(4, 4)).unwrap();
        assert_eq!(f.index, Some(256.0));
        assert_eq!(f.series, vec![Some(256.0); 3]);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let pred = Tensor::zeros(&[2, 2, 2, 2]);
        let f = flicker_index(&pred, &[vec![false; 4]]).unwrap();
        assert_eq!(f.index, None);
        assert_eq!(f.series, vec![None]);
    }

    #[test]
    fn chroma_mse_equals_training_loss() {
        let (_, clip) = disk_clip(0.0);
        let pred = FanInUniform::new(6).sample(&[4, 24, 24, 2], 1);
        let r = score_prediction("m", &clip, &pred, 1.0).unwrap();
        let (_, target) = colorspace::split_luminance(&clip).unwrap();
        assert!((r.chroma_mse - video_loss(&pred, &target).unwrap().item()).abs() < 1e-12);
        assert_eq!(r.flicker_series.len(), 3);
        assert_eq!(r.chroma_mse_series.len(), 4);
    }

    #[test]
    fn ground_truth_is_flicker_free_on_static_pixels() {
        let (_, clip) = disk_clip(0.0);
        let (_, target) = colorspace::split_luminance(&clip).unwrap();
        let f = flicker_index(&target, &static_mask(&clip, 1.0).unwrap()).unwrap();
        assert_eq!(f.index, Some(0.0));
    }

    #[test]
    fn self_comparison_has_identical_columns() {
        let (mut spec, _) = disk_clip(0.0);
        spec.height = 16;
        spec.width = 16;
        spec.objects[0].position = [5.0, 8.0];
        let clips: Vec<_> = (0..3)
            .map(|i| {
                spec.seed = i;
                generate_clip(&spec).unwrap()
            })
            .collect();
        let m = FlowChromaModel::new(ModelConfig::desk(3, 16, 8, 8)).unwrap();
        let r = compare(("a", &m), ("b", &m), &clips, EvalOptions::default()).unwrap();
        for c in &r.clips {
            assert_eq!(c.reports[0].flicker_index, c.reports[1].flicker_index);
            assert_eq!(c.reports[0].chroma_mse, c.reports[1].chroma_mse);
        }
        let mean: f64 = r.clips.iter().map(|c| c.reports[0].chroma_mse).sum::<f64>() / 3.0;
        assert!((r.summary[0].mean_chroma_mse - mean).abs() < 1e-15);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 1 + 1 + 3 + 1 + 1);
        let back: ComparisonReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn frame_size_mismatch_is_rejected() {
        let (_, clip) = disk_clip(0.0);
        let m = FlowChromaModel::new(ModelConfig::desk(3, 16, 8, 8)).unwrap();
        assert!(matches!(
            evaluate_clip(&m, "m", &clip, EvalOptions::default()),
            Err(EvalError::Dims(_))
        ));
    }
}
