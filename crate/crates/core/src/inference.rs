//! Sliding-window colorization of clips of any length.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{self, ColorError, RgbFrame};
use crate::model::{FlowChromaModel, ModelError, Result};
use crate::tensor::Tensor;

/// Which of the overlapping windows supplies a frame's chroma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentRule {
    /// The last window containing the frame: start `min(f, N − T)` at stride 1.
    #[default]
    LastWindow,
    /// The first window containing the frame, where it sits as late as
    /// possible and the recurrent state has seen the most preceding frames.
    MostContext,
}

/// Window start positions over an `n`-frame clip and the frame→window rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub frames: usize,
    pub window: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    /// Leading copies of frame 0 when the clip is shorter than a window.
    pub padding: usize,
    pub rule: AssignmentRule,
}

/// Where one output frame comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub window: usize,
    pub position: usize,
}

/// Windows `[0, T)`, `[s, s+T)`, … plus one right-aligned at `n − T`.
/// A stride larger than `T` would leave gaps, so it is capped at `T`.
pub fn plan_windows(n: usize, t: usize, stride: usize) -> WindowSchedule {
    let (n, t) = (n.max(1), t.max(1));
    let stride = stride.clamp(1, t);
    if n <= t {
        return WindowSchedule {
            frames: n,
            window: t,
            stride,
            starts: vec![0],
            padding: t - n,
            rule: AssignmentRule::default(),
        };
    }
    let last = n - t;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    WindowSchedule {
        frames: n,
        window: t,
        stride,
        starts,
        padding: 0,
        rule: AssignmentRule::default(),
    }
}

impl WindowSchedule {
    pub fn with_rule(self, rule: AssignmentRule) -> Self {
        WindowSchedule { rule, ..self }
    }

    /// The window supplying frame `f` under `self.rule` and `f`'s position inside it.
    pub fn assignment(&self, f: usize) -> Assignment {
        assert!(
            f < self.frames,
            "frame {f} outside a {}-frame clip",
            self.frames
        );
        if self.padding > 0 || self.starts.len() == 1 {
            return Assignment {
                window: 0,
                position: f + self.padding,
            };
        }
        let window = match self.rule {
            AssignmentRule::LastWindow => self.starts.partition_point(|&s| s <= f) - 1,
            AssignmentRule::MostContext => self.starts.partition_point(|&s| s + self.window <= f),
        };
        Assignment {
            window,
            position: f - self.starts[window],
        }
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        (0..self.frames).map(|f| self.assignment(f)).collect()
    }

    /// Source frame indices fed to window `w`, padding included.
    pub fn window_frames(&self, w: usize) -> Vec<usize> {
        let start = self.starts[w];
        (0..self.window)
            .map(|p| {
                (start + p)
                    .saturating_sub(self.padding)
                    .min(self.frames - 1)
            })
            .collect()
    }
}

fn frame_stack(frames: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let picked = idx
        .iter()
        .map(|&i| frames.select(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::stack(&picked)?)
}

/// Chroma `N×H×W×2` for luminance `N×H×W×1`. Only windows that own at
/// least one frame are evaluated; they run in parallel and the result is
/// assembled by frame index.
pub fn colorize_video(
    model: &FlowChromaModel,
    lum: &Tensor,
    schedule: &WindowSchedule,
) -> Result<Tensor> {
    let cfg = model.config();
    let s = lum.shape();
    if s.len() != 4
        || s[0] != schedule.frames
        || s[1] != cfg.height
        || s[2] != cfg.width
        || s[3] != 1
    {
        return Err(ModelError::Shape {
            what: "colorize input",
            expected: vec![schedule.frames, cfg.height, cfg.width, 1],
            got: s.to_vec(),
        });
    }
    if schedule.window != cfg.window {
        return Err(ModelError::Config(format!(
            "schedule window {} differs from model window {}",
            schedule.window, cfg.window
        )));
    }
    let assignments = schedule.assignments();
    let mut needed: Vec<usize> = assignments.iter().map(|a| a.window).collect();
    needed.dedup();
    let outputs: BTreeMap<usize, Tensor> = needed
        .par_iter()
        .map(|&w| {
            let input = frame_stack(lum, &schedule.window_frames(w))?;
            Ok((w, model.forward(&input)?))
        })
        .collect::<Result<_>>()?;
    let frames = assignments
        .iter()
        .map(|a| outputs[&a.window].select(a.position))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::stack(&frames)?)
}

/// Merges predicted chroma back onto the input luminance and converts to RGB.
pub fn assemble_rgb(lum: &Tensor, chroma: &Tensor) -> Result<Vec<RgbFrame>, ColorError> {
    Ok(colorspace::merge_luminance(lum, chroma)?
        .iter()
        .map(colorspace::lab_to_rgb)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, LabVideoClip, SceneObject, Shape, SyntheticSceneSpec};
    use crate::model::ModelConfig;
    use crate::nn::FanInUniform;

    fn starts(n: usize, t: usize, s: usize) -> Vec<usize> {
        plan_windows(n, t, s).starts
    }

    #[test]
    fn window_starts() {
        assert_eq!(starts(7, 5, 1), vec![0, 1, 2]);
        assert_eq!(starts(5, 5, 1), vec![0]);
        assert_eq!(starts(3, 5, 1), vec![0]);
        assert_eq!(starts(12, 5, 3), vec![0, 3, 6, 7]);
        assert_eq!(plan_windows(3, 5, 1).padding, 2);
        assert_eq!(plan_windows(3, 5, 1).window_frames(0), vec![0, 0, 0, 1, 2]);
        assert_eq!(plan_windows(9, 2, 7).starts, vec![0, 2, 4, 6, 7]);
    }

    #[test]
    fn assignment_table_n7() {
        // frame f reads window min(f, N−T) at position f − start
        let table = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (2, 3), (2, 4)];
        let s = plan_windows(7, 5, 1);
        for (f, &(w, p)) in table.iter().enumerate() {
            assert_eq!(
                s.assignment(f),
                Assignment {
                    window: w,
                    position: p
                },
                "frame {f}"
            );
        }
    }

    #[test]
    fn most_context_table_n7() {
        let table = [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 4), (2, 4)];
        let s = plan_windows(7, 5, 1).with_rule(AssignmentRule::MostContext);
        for (f, &(w, p)) in table.iter().enumerate() {
            assert_eq!(
                s.assignment(f),
                Assignment {
                    window: w,
                    position: p
                },
                "frame {f}"
            );
        }
    }

    #[test]
    fn every_frame_assigned_once_to_a_covering_window() {
        for n in 1..40 {
            for t in 1..8 {
                for stride in 1..5 {
                    let s = plan_windows(n, t, stride);
                    let m = s.clone().with_rule(AssignmentRule::MostContext);
                    for f in 0..n {
                        let a = s.assignment(f);
                        assert_eq!(s.window_frames(a.window)[a.position], f);
                        let b = m.assignment(f);
                        assert_eq!(m.window_frames(b.window)[b.position], f);
                        if s.padding == 0 {
                            assert!(s.starts[a.window + 1..].iter().all(|&st| st > f));
                            assert!(m.starts[..b.window].iter().all(|&st| st + t <= f));
                        }
                    }
                }
            }
        }
    }

    fn model(ablate: bool) -> FlowChromaModel {
        let mut c = ModelConfig::desk(3, 16, 8, 8);
        c.ablate_lstm = ablate;
        FlowChromaModel::new(c).unwrap()
    }

    fn random_lum(n: usize, seed: u64) -> Tensor {
        let x = FanInUniform::new(seed).sample(&[n, 16, 16, 1], 1);
        Tensor::new(
            x.shape(),
            x.data().iter().map(|v| (v + 1.0) / 2.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_fit_equals_forward() {
        let m = model(false);
        let lum = random_lum(3, 1);
        let out = colorize_video(&m, &lum, &plan_windows(3, 3, 1)).unwrap();
        assert_eq!(out, m.forward(&lum).unwrap());
    }

    #[test]
    fn ablated_windowing_equals_per_frame() {
        let m = model(true);
        let lum = random_lum(7, 2);
        let out = colorize_video(&m, &lum, &plan_windows(7, 3, 1)).unwrap();
        for f in 0..7 {
            let single = lum.slice(0, f, 1).unwrap();
            let y = m.forward(&single).unwrap();
            assert_eq!(out.select(f).unwrap(), y.select(0).unwrap());
        }
    }

    #[test]
    fn static_clip_under_baseline_is_constant() {
        let m = model(true);
        let one = random_lum(1, 4);
        let lum = frame_stack(&one, &[0; 6]).unwrap();
        let out = colorize_video(&m, &lum, &plan_windows(6, 3, 1)).unwrap();
        for f in 1..6 {
            assert_eq!(out.select(f).unwrap(), out.select(0).unwrap());
        }
    }

    #[test]
    fn short_clip_drops_padding() {
        let m = model(false);
        let lum = random_lum(2, 5);
        let out = colorize_video(&m, &lum, &plan_windows(2, 3, 1)).unwrap();
        let padded = frame_stack(&lum, &[0, 0, 1]).unwrap();
        let full = m.forward(&padded).unwrap();
        assert_eq!(out.shape(), &[2, 16, 16, 2]);
        assert_eq!(out.select(0).unwrap(), full.select(1).unwrap());
        assert_eq!(out.select(1).unwrap(), full.select(2).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let m = model(false);
        assert!(colorize_video(&m, &random_lum(4, 1), &plan_windows(5, 3, 1)).is_err());
    }

    #[test]
    fn zero_chroma_is_grey() {
        let lum = random_lum(2, 9);
        let rgb = assemble_rgb(&lum, &Tensor::zeros(&[2, 16, 16, 2])).unwrap();
        assert_eq!(rgb.len(), 2);
        for f in &rgb {
            for p in f.pixels().chunks_exact(3) {
                assert!((p[0] - p[1]).abs() < 1.0 / 255.0 && (p[1] - p[2]).abs() < 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn split_then_assemble_round_trips() {
        let spec = SyntheticSceneSpec {
            height: 16,
            width: 16,
            frames: 3,
            background: [0.2, 0.6, 0.4],
            objects: vec![SceneObject {
                shape: Shape::Rect {
                    width: 5.0,
                    height: 4.0,
                },
                color: [0.9, 0.8, 0.1],
                position: [6.0, 6.0],
                velocity: [1.0, 0.0],
            }],
            cuts: vec![],
            noise: 0.0,
            seed: 1,
            fps: 10.0,
        };
        let clip: LabVideoClip = generate_clip(&spec).unwrap();
        let (lum, chroma) = colorspace::split_luminance(&clip).unwrap();
        let rgb = assemble_rgb(&lum, &chroma).unwrap();
        for (a, b) in rgb.iter().zip(clip.to_rgb()) {
            for (x, y) in a.pixels().iter().zip(b.pixels()) {
                assert!((x - y).abs() < 1.0 / 255.0);
            }
        }
    }
}
