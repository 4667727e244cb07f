use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, LabVideoClip};
use crate::colorspace::RgbFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rect { width: f64, height: f64 },
    Disk { radius: f64 },
}

impl Shape {
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            Shape::Rect { width, height } => (width / 2.0, height / 2.0),
            Shape::Disk { radius } => (radius, radius),
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Rect { width, height } => dx.abs() < width / 2.0 && dy.abs() < height / 2.0,
            Shape::Disk { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }
}

/// An object translating linearly; `position` is its centre at the first
/// frame of its scene, in pixel units with `(0, 0)` at the top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: [f64; 3],
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
}

/// Replaces the background and objects from `frame` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCut {
    pub frame: usize,
    pub background: [f64; 3],
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: [f64; 3],
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub cuts: Vec<SceneCut>,
    /// Amplitude of uniform grey noise added per pixel and frame.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    24.0
}

fn check_color(what: &str, c: &[f64; 3]) -> Result<(), DataError> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(DataError::InvalidScene(format!(
            "{what} color {c:?} is outside the sRGB gamut [0, 1]"
        )))
    }
}

fn check_object(i: usize, o: &SceneObject, height: usize, width: usize) -> Result<(), DataError> {
    check_color(&format!("object {i}"), &o.color)?;
    let (hx, hy) = o.shape.half_extent();
    if !(hx > 0.0 && hy > 0.0) || 2.0 * hx > width as f64 || 2.0 * hy > height as f64 {
        return Err(DataError::InvalidScene(format!(
            "object {i} size {:?} does not fit a {height}×{width} frame",
            o.shape
        )));
    }
    if !o.position.iter().chain(&o.velocity).all(|v| v.is_finite()) {
        return Err(DataError::InvalidScene(format!(
            "object {i} has non-finite motion"
        )));
    }
    Ok(())
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(DataError::InvalidScene(format!(
                "degenerate dimensions {}×{} with {} frames",
                self.height, self.width, self.frames
            )));
        }
        check_color("background", &self.background)?;
        for (i, o) in self.objects.iter().enumerate() {
            check_object(i, o, self.height, self.width)?;
        }
        let mut last = 0;
        for cut in &self.cuts {
            if cut.frame == 0 || cut.frame <= last || cut.frame >= self.frames {
                return Err(DataError::InvalidScene(format!(
                    "scene cut at frame {} must be increasing and within 1..{}",
                    cut.frame, self.frames
                )));
            }
            last = cut.frame;
            check_color("cut background", &cut.background)?;
            for (i, o) in cut.objects.iter().enumerate() {
                check_object(i, o, self.height, self.width)?;
            }
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(DataError::InvalidScene(format!(
                "noise {} must be in [0, 1)",
                self.noise
            )));
        }
        Ok(())
    }

    /// Centre of `object` at `frame`, clamped so the object stays inside the frame.
    pub fn object_center(&self, object: &SceneObject, frames_since_cut: usize) -> [f64; 2] {
        let (hx, hy) = object.shape.half_extent();
        let t = frames_since_cut as f64;
        let x = (object.position[0] + object.velocity[0] * t).clamp(hx, self.width as f64 - hx);
        let y = (object.position[1] + object.velocity[1] * t).clamp(hy, self.height as f64 - hy);
        [x, y]
    }

    fn scene_at(&self, frame: usize) -> (usize, &[f64; 3], &[SceneObject]) {
        self.cuts
            .iter()
            .rev()
            .find(|c| c.frame <= frame)
            .map(|c| (c.frame, &c.background, c.objects.as_slice()))
            .unwrap_or((0, &self.background, self.objects.as_slice()))
    }

    pub fn render_frame(&self, frame: usize) -> Vec<f64> {
        let (start, background, objects) = self.scene_at(frame);
        let (h, w) = (self.height, self.width);
        let mut pixels = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            pixels.extend_from_slice(background);
        }
        for o in objects {
            let [cx, cy] = self.object_center(o, frame - start);
            for y in 0..h {
                for x in 0..w {
                    if o.shape.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy) {
                        pixels[(y * w + x) * 3..][..3].copy_from_slice(&o.color);
                    }
                }
            }
        }
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            for px in pixels.chunks_exact_mut(3) {
                let n: f64 = rng.random_range(-self.noise..=self.noise);
                px.iter_mut().for_each(|c| *c = (*c + n).clamp(0.0, 1.0));
            }
        }
        pixels
    }
}

/// Renders a scene into a La*b* clip. Pure in `spec`.
pub fn generate_clip(spec: &SyntheticSceneSpec) -> Result<LabVideoClip, DataError> {
    spec.validate()?;
    let frames = (0..spec.frames)
        .map(|f| RgbFrame::new(spec.height, spec.width, spec.render_frame(f)))
        .collect::<Result<Vec<_>, _>>()?;
    LabVideoClip::from_rgb(&frames, format!("synthetic-{}", spec.seed), spec.fps)
}

/// Randomized scene family used to generate datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub palette: Vec<[f64; 3]>,
    #[serde(default = "one")]
    pub min_objects: usize,
    #[serde(default = "one")]
    pub max_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Largest per-axis speed in pixels per frame.
    pub max_speed: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn one() -> usize {
    1
}

impl SceneTemplate {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(DataError::InvalidScene(
                "template has degenerate dimensions".into(),
            ));
        }
        if self.palette.len() < 2 {
            return Err(DataError::InvalidScene(
                "palette needs at least two colors".into(),
            ));
        }
        for (i, c) in self.palette.iter().enumerate() {
            check_color(&format!("palette entry {i}"), c)?;
        }
        if self.min_objects > self.max_objects {
            return Err(DataError::InvalidScene(
                "min_objects exceeds max_objects".into(),
            ));
        }
        let limit = self.height.min(self.width) as f64 / 2.0;
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size <= limit) {
            return Err(DataError::InvalidScene(format!(
                "object sizes must satisfy 0 < min_size <= max_size <= {limit}"
            )));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(DataError::InvalidScene(
                "max_speed must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(DataError::InvalidScene(format!(
                "noise {} must be in [0, 1)",
                self.noise
            )));
        }
        Ok(())
    }

    /// Draws a concrete static-background scene from the template.
    pub fn instantiate(&self, seed: u64) -> Result<SyntheticSceneSpec, DataError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = rng.random_range(0..self.palette.len());
        let count = rng.random_range(self.min_objects..=self.max_objects);
        let objects = (0..count)
            .map(|_| {
                let mut ci = rng.random_range(0..self.palette.len() - 1);
                if ci >= bg {
                    ci += 1;
                }
                let size = rng.random_range(self.min_size..=self.max_size);
                let shape = if rng.random_bool(0.5) {
                    Shape::Disk { radius: size }
                } else {
                    Shape::Rect {
                        width: 2.0 * size,
                        height: 2.0 * rng.random_range(self.min_size..=size),
                    }
                };
                let (hx, hy) = shape.half_extent();
                let position = [
                    rng.random_range(hx..=self.width as f64 - hx),
                    rng.random_range(hy..=self.height as f64 - hy),
                ];
                let mut speed = || {
                    if self.max_speed > 0.0 {
                        rng.random_range(-self.max_speed..=self.max_speed)
                    } else {
                        0.0
                    }
                };
                let velocity = [speed(), speed()];
                SceneObject {
                    shape,
                    color: self.palette[ci],
                    position,
                    velocity,
                }
            })
            .collect();
        let spec = SyntheticSceneSpec {
            height: self.height,
            width: self.width,
            frames: self.frames,
            background: self.palette[bg],
            objects,
            cuts: Vec::new(),
            noise: self.noise,
            seed,
            fps: self.fps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::rgb_pixel_to_lab;

    fn disk_scene(velocity: [f64; 2]) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            height: 32,
            width: 32,
            frames: 5,
            background: [0.2, 0.4, 0.8],
            objects: vec![SceneObject {
                shape: Shape::Disk { radius: 4.0 },
                color: [0.9, 0.3, 0.1],
                position: [8.0, 16.0],
                velocity,
            }],
            cuts: Vec::new(),
            noise: 0.0,
            seed: 7,
            fps: 24.0,
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let clip = generate_clip(&disk_scene([0.0, 0.0])).unwrap();
        for f in clip.frames() {
            assert_eq!(f, &clip.frames()[0]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = disk_scene([1.5, -0.5]);
        spec.noise = 0.05;
        assert_eq!(generate_clip(&spec).unwrap(), generate_clip(&spec).unwrap());
    }

    #[test]
    fn disk_centroid_tracks_velocity() {
        let spec = disk_scene([2.0, 0.0]);
        let clip = generate_clip(&spec).unwrap();
        let object_l = rgb_pixel_to_lab([0.9, 0.3, 0.1])[0];
        for (t, frame) in clip.frames().iter().enumerate() {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    if (frame.pixel(y, x)[0] - object_l).abs() < 1e-9 {
                        sx += x as f64 + 0.5;
                        sy += y as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            assert!(n > 0.0);
            assert!(
                (sx / n - (8.0 + 2.0 * t as f64)).abs() < 1e-9,
                "frame {t}: {}",
                sx / n
            );
            assert!((sy / n - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn objects_clamped_inside_frame() {
        let spec = disk_scene([10.0, 0.0]);
        let obj = &spec.objects[0];
        assert_eq!(spec.object_center(obj, 4), [28.0, 16.0]);
    }

    #[test]
    fn scene_cut_replaces_content() {
        let mut spec = disk_scene([0.0, 0.0]);
        spec.cuts.push(SceneCut {
            frame: 3,
            background: [0.5, 0.5, 0.5],
            objects: Vec::new(),
        });
        let clip = generate_clip(&spec).unwrap();
        assert_eq!(clip.frames()[1], clip.frames()[2]);
        assert!(clip.frames()[3].a.iter().all(|a| a.abs() < 1e-9));
        assert_ne!(clip.frames()[2], clip.frames()[3]);
    }

    #[test]
    fn degenerate_dims_rejected() {
        let mut spec = disk_scene([0.0, 0.0]);
        spec.frames = 0;
        assert!(matches!(
            generate_clip(&spec),
            Err(DataError::InvalidScene(_))
        ));
    }

    #[test]
    fn out_of_gamut_color_rejected() {
        let mut spec = disk_scene([0.0, 0.0]);
        spec.objects[0].color = [1.2, 0.0, 0.0];
        assert!(
            matches!(spec.validate(), Err(DataError::InvalidScene(msg)) if msg.contains("gamut"))
        );
    }

    #[test]
    fn generated_rgb_round_trips_through_lab() {
        let mut spec = disk_scene([1.0, 1.0]);
        spec.noise = 0.1;
        let clip = generate_clip(&spec).unwrap();
        for (f, rgb) in clip.to_rgb().iter().enumerate() {
            let want = spec.render_frame(f);
            for (a, b) in rgb.pixels().iter().zip(&want) {
                assert!((a - b).abs() < 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn template_instantiation_is_valid_and_seeded() {
        let template = SceneTemplate {
            height: 32,
            width: 32,
            frames: 6,
            palette: vec![[0.1, 0.5, 0.2], [0.8, 0.7, 0.2], [0.3, 0.3, 0.7]],
            min_objects: 1,
            max_objects: 3,
            min_size: 3.0,
            max_size: 6.0,
            max_speed: 2.0,
            noise: 0.0,
            fps: 24.0,
        };
        let a = template.instantiate(11).unwrap();
        assert_eq!(a, template.instantiate(11).unwrap());
        assert_ne!(a, template.instantiate(12).unwrap());
        assert!(a.objects.iter().all(|o| o.color != a.background));
    }
}
