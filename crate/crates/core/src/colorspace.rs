//! sRGB ↔ CIE La*b* (D65) conversion and network-facing channel layout.
//!
//! Luminance enters the network as `L / 100` and chroma targets as
//! `a / 128`, `b / 128`.

use std::sync::OnceLock;

use thiserror::Error;

use crate::data::LabVideoClip;
use crate::tensor::{Tensor, TensorError};

/// Linear sRGB → XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// `(6/29)^3`
const EPSILON: f64 = 216.0 / 24389.0;
/// `(29/3)^3`
const KAPPA: f64 = 24389.0 / 27.0;

pub const CHROMA_SCALE: f64 = 128.0;
pub const CHROMA_MIN: f64 = -128.0;
pub const CHROMA_MAX: f64 = 127.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColorError {
    #[error("channel value {value} at pixel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("expected {expected} values for a {height}×{width} frame, got {got}")]
    Size {
        height: usize,
        width: usize,
        expected: usize,
        got: usize,
    },
    #[error("clip has no frames")]
    EmptyClip,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Gamma-encoded sRGB frame, interleaved `H×W×3` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl RgbFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ColorError> {
        let expected = height * width * 3;
        if pixels.len() != expected {
            return Err(ColorError::Size {
                height,
                width,
                expected,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ColorError::OutOfRange {
                index: index / 3,
                value,
            });
        }
        Ok(RgbFrame {
            height,
            width,
            pixels,
        })
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self, ColorError> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// 8-bit encoding, rounding to nearest.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Planar La*b* frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabFrame {
    pub height: usize,
    pub width: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabFrame {
    pub fn new(
        height: usize,
        width: usize,
        l: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self, ColorError> {
        let expected = height * width;
        for plane in [&l, &a, &b] {
            if plane.len() != expected {
                return Err(ColorError::Size {
                    height,
                    width,
                    expected,
                    got: plane.len(),
                });
            }
        }
        Ok(LabFrame {
            height,
            width,
            l,
            a,
            b,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.l[i], self.a[i], self.b[i]]
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// D65 white, taken as the XYZ of linear RGB (1, 1, 1) so white is exactly achromatic.
fn white() -> [f64; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

fn xyz_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_XYZ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [
            cof(1, 2, 1, 2) / det,
            -cof(0, 2, 1, 2) / det,
            cof(0, 1, 1, 2) / det,
        ],
        [
            -cof(1, 2, 0, 2) / det,
            cof(0, 2, 0, 2) / det,
            -cof(0, 1, 0, 2) / det,
        ],
        [
            cof(1, 2, 0, 1) / det,
            -cof(0, 2, 0, 1) / det,
            cof(0, 1, 0, 1) / det,
        ],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts one gamma-encoded sRGB triple to La*b*.
pub fn rgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat_vec(&RGB_TO_XYZ, rgb.map(srgb_to_linear));
    let wp = white();
    let fx = lab_f(xyz[0] / wp[0]);
    let fy = lab_f(xyz[1] / wp[1]);
    let fz = lab_f(xyz[2] / wp[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts one La*b* triple to gamma-encoded sRGB, clamping out-of-gamut channels.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let wp = white();
    let xyz = [
        lab_f_inv(fx) * wp[0],
        lab_f_inv(fy) * wp[1],
        lab_f_inv(fz) * wp[2],
    ];
    mat_vec(xyz_to_rgb_matrix(), xyz).map(|c| linear_to_srgb(c).clamp(0.0, 1.0))
}

pub fn rgb_to_lab(frame: &RgbFrame) -> Result<LabFrame, ColorError> {
    if let Some((index, &value)) = frame
        .pixels
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ColorError::OutOfRange {
            index: index / 3,
            value,
        });
    }
    let n = frame.height * frame.width;
    let (mut l, mut a, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in frame.pixels.chunks_exact(3) {
        let lab = rgb_pixel_to_lab([px[0], px[1], px[2]]);
        l.push(lab[0]);
        a.push(lab[1]);
        b.push(lab[2]);
    }
    Ok(LabFrame {
        height: frame.height,
        width: frame.width,
        l,
        a,
        b,
    })
}

pub fn lab_to_rgb(frame: &LabFrame) -> RgbFrame {
    let n = frame.height * frame.width;
    let mut pixels = Vec::with_capacity(n * 3);
    for i in 0..n {
        pixels.extend(lab_pixel_to_rgb([frame.l[i], frame.a[i], frame.b[i]]));
    }
    RgbFrame {
        height: frame.height,
        width: frame.width,
        pixels,
    }
}

pub fn normalize_ab(t: &Tensor) -> Result<Tensor, TensorError> {
    t.mul_scalar(1.0 / CHROMA_SCALE)
}

pub fn denormalize_ab(t: &Tensor) -> Result<Tensor, TensorError> {
    t.mul_scalar(CHROMA_SCALE)
}

/// Splits a clip into network input (`T×H×W×1`, `L/100`) and chroma targets
/// (`T×H×W×2`, normalized a*, b*).
pub fn split_luminance(clip: &LabVideoClip) -> Result<(Tensor, Tensor), ColorError> {
    let frames = clip.frames();
    let first = frames.first().ok_or(ColorError::EmptyClip)?;
    let (h, w) = (first.height, first.width);
    let n = h * w;
    let mut lum = Vec::with_capacity(frames.len() * n);
    let mut chroma = Vec::with_capacity(frames.len() * n * 2);
    for f in frames {
        lum.extend(f.l.iter().map(|l| (l / 100.0).clamp(0.0, 1.0)));
        for i in 0..n {
            chroma.push(f.a[i] / CHROMA_SCALE);
            chroma.push(f.b[i] / CHROMA_SCALE);
        }
    }
    let t = frames.len();
    Ok((
        Tensor::new(&[t, h, w, 1], lum)?,
        Tensor::new(&[t, h, w, 2], chroma)?,
    ))
}

/// Rebuilds La*b* frames from normalized luminance and chroma tensors.
///
/// Chroma is denormalized and clamped to the nominal `[-128, 127]` range.
pub fn merge_luminance(lum: &Tensor, chroma: &Tensor) -> Result<Vec<LabFrame>, ColorError> {
    let ls = lum.shape();
    let cs = chroma.shape();
    if ls.len() != 4 || cs.len() != 4 || ls[3] != 1 || cs[3] != 2 || ls[..3] != cs[..3] {
        return Err(TensorError::ShapeMismatch {
            op: "merge_luminance",
            lhs: ls.to_vec(),
            rhs: cs.to_vec(),
        }
        .into());
    }
    let (t, h, w) = (ls[0], ls[1], ls[2]);
    let n = h * w;
    let ld = lum.data();
    let cd = chroma.data();
    (0..t)
        .map(|f| {
            let l = ld[f * n..(f + 1) * n].iter().map(|v| v * 100.0).collect();
            let c = &cd[f * n * 2..(f + 1) * n * 2];
            let ab = |k: usize| -> Vec<f64> {
                c.chunks_exact(2)
                    .map(|p| (p[k] * CHROMA_SCALE).clamp(CHROMA_MIN, CHROMA_MAX))
                    .collect()
            };
            LabFrame::new(h, w, l, ab(0), ab(1))
        })
        .collect()
}
