//! Video clips, synthetic scene rendering, PNG frame directories and dataset manifests.

mod frames;
mod manifest;
mod synthetic;

use thiserror::Error;

use crate::colorspace::{self, ColorError, LabFrame, RgbFrame};
use crate::tensor::Tensor;

pub use frames::{frame_file_name, load_clip, save_clip};
pub use manifest::{DatasetManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use synthetic::{
    generate_clip, SceneCut, SceneObject, SceneTemplate, Shape, SyntheticSceneSpec,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{path}: {msg}")]
    Frames { path: String, msg: String },
    #[error("window {start}..{end} exceeds clip of {len} frames")]
    Window {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("clip frames disagree on dimensions: frame {index} is {got:?}, expected {expected:?}")]
    FrameDims {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("clip has no frames")]
    Empty,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A sequence of La*b* frames sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LabVideoClip {
    frames: Vec<LabFrame>,
    pub source_id: String,
    /// Informational only.
    pub fps: f64,
}

impl LabVideoClip {
    pub fn new(
        frames: Vec<LabFrame>,
        source_id: impl Into<String>,
        fps: f64,
    ) -> Result<Self, DataError> {
        let first = frames.first().ok_or(DataError::Empty)?;
        let expected = (first.height, first.width);
        for (index, f) in frames.iter().enumerate() {
            if (f.height, f.width) != expected {
                return Err(DataError::FrameDims {
                    index,
                    expected,
                    got: (f.height, f.width),
                });
            }
        }
        Ok(LabVideoClip {
            frames,
            source_id: source_id.into(),
            fps,
        })
    }

    pub fn from_rgb(
        frames: &[RgbFrame],
        source_id: impl Into<String>,
        fps: f64,
    ) -> Result<Self, DataError> {
        let lab = frames
            .iter()
            .map(colorspace::rgb_to_lab)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lab, source_id, fps)
    }

    pub fn frames(&self) -> &[LabFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn to_rgb(&self) -> Vec<RgbFrame> {
        self.frames.iter().map(colorspace::lab_to_rgb).collect()
    }

    /// Frames `start..start + len` as a new clip.
    pub fn window(&self, start: usize, len: usize) -> Result<LabVideoClip, DataError> {
        let end = start + len;
        if len == 0 || end > self.frames.len() {
            return Err(DataError::Window {
                start,
                end,
                len: self.frames.len(),
            });
        }
        Ok(LabVideoClip {
            frames: self.frames[start..end].to_vec(),
            source_id: self.source_id.clone(),
            fps: self.fps,
        })
    }

    /// Same clip with a* and b* zeroed.
    pub fn grayscale(&self) -> LabVideoClip {
        let frames = self
            .frames
            .iter()
            .map(|f| LabFrame {
                a: vec![0.0; f.a.len()],
                b: vec![0.0; f.b.len()],
                ..f.clone()
            })
            .collect();
        LabVideoClip {
            frames,
            source_id: self.source_id.clone(),
            fps: self.fps,
        }
    }
}

/// Normalized `(luminance T×H×W×1, chroma T×H×W×2)` for frames `start..start+t`.
pub fn to_training_example(
    clip: &LabVideoClip,
    t: usize,
    start: usize,
) -> Result<(Tensor, Tensor), DataError> {
    let window = clip.window(start, t)?;
    Ok(colorspace::split_luminance(&window)?)
}

/// Every window of length `t` at the given stride, in start order.
pub fn training_examples(
    clip: &LabVideoClip,
    t: usize,
    stride: usize,
) -> Result<Vec<(Tensor, Tensor)>, DataError> {
    if clip.len() < t {
        return Err(DataError::Window {
            start: 0,
            end: t,
            len: clip.len(),
        });
    }
    (0..=clip.len() - t)
        .step_by(stride.max(1))
        .map(|start| to_training_example(clip, t, start))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(frames: usize) -> LabVideoClip {
        let frames = (0..frames)
            .map(|f| {
                let l = (0..16).map(|i| (i + f) as f64 * 3.0).collect();
                let a = (0..16).map(|i| i as f64 - f as f64).collect();
                let b = (0..16).map(|i| -(i as f64) * 2.0).collect();
                LabFrame::new(4, 4, l, a, b).unwrap()
            })
            .collect();
        LabVideoClip::new(frames, "ramp", 24.0).unwrap()
    }

    #[test]
    fn full_clip_example() {
        let clip = ramp_clip(5);
        let (lum, chroma) = to_training_example(&clip, 5, 0).unwrap();
        assert_eq!(lum.shape(), &[5, 4, 4, 1]);
        assert_eq!(chroma.shape(), &[5, 4, 4, 2]);
    }

    #[test]
    fn achromatic_clip_has_zero_targets() {
        let clip = ramp_clip(5).grayscale();
        let (_, chroma) = to_training_example(&clip, 5, 0).unwrap();
        assert!(chroma.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn seven_frames_give_three_windows() {
        let clip = ramp_clip(7);
        let examples = training_examples(&clip, 5, 1).unwrap();
        assert_eq!(examples.len(), 3);
    }

    #[test]
    fn overlapping_windows_agree() {
        let clip = ramp_clip(7);
        let examples = training_examples(&clip, 5, 1).unwrap();
        for s in 0..examples.len() - 1 {
            for i in 1..5 {
                assert_eq!(
                    examples[s].0.select(i).unwrap(),
                    examples[s + 1].0.select(i - 1).unwrap()
                );
                assert_eq!(
                    examples[s].1.select(i).unwrap(),
                    examples[s + 1].1.select(i - 1).unwrap()
                );
            }
        }
    }

    #[test]
    fn out_of_range_window() {
        let clip = ramp_clip(5);
        assert!(matches!(
            to_training_example(&clip, 5, 1),
            Err(DataError::Window {
                start: 1,
                end: 6,
                len: 5
            })
        ));
    }

    #[test]
    fn merge_split_round_trip() {
        let clip = ramp_clip(5);
        let (lum, chroma) = colorspace::split_luminance(&clip).unwrap();
        let frames = colorspace::merge_luminance(&lum, &chroma).unwrap();
        for (a, b) in frames.iter().zip(clip.frames()) {
            for (x, y) in
                a.l.iter()
                    .chain(&a.a)
                    .chain(&a.b)
                    .zip(b.l.iter().chain(&b.a).chain(&b.b))
            {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_clip_rejected() {
        assert!(matches!(
            LabVideoClip::new(Vec::new(), "x", 24.0),
            Err(DataError::Empty)
        ));
    }
}
