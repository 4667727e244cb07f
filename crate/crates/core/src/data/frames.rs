use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};

use super::{DataError, LabVideoClip};
use crate::colorspace::RgbFrame;

const PREFIX: &str = "frame_";
const SUFFIX: &str = ".png";
const DIGITS: usize = 5;

pub fn frame_file_name(index: usize) -> String {
    format!("{PREFIX}{index:0DIGITS$}{SUFFIX}")
}

fn frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix(PREFIX)?.strip_suffix(SUFFIX)?;
    if digits.len() < DIGITS || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn frames_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Frames {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Writes `frame_00000.png`, `frame_00001.png`, … as 8-bit sRGB.
pub fn save_clip(clip: &LabVideoClip, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in clip.to_rgb().iter().enumerate() {
        save_frame(frame, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

pub(crate) fn save_frame(frame: &RgbFrame, path: &Path) -> Result<(), DataError> {
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        frame.width() as u32,
        frame.height() as u32,
        frame.to_bytes(),
    )
    .ok_or_else(|| frames_err(path, "frame buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Loads a directory of consecutively numbered PNG frames starting at 0.
pub fn load_clip(dir: &Path) -> Result<LabVideoClip, DataError> {
    let mut indexed = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| frames_err(dir, e.to_string()))? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if !name.ends_with(SUFFIX) {
            continue;
        }
        let index = frame_index(&name).ok_or_else(|| {
            frames_err(
                &entry.path(),
                format!("expected {PREFIX}NNNNN{SUFFIX} naming"),
            )
        })?;
        indexed.push((index, entry.path()));
    }
    if indexed.is_empty() {
        return Err(frames_err(dir, "no PNG frames found"));
    }
    indexed.sort();
    let mut frames = Vec::with_capacity(indexed.len());
    let mut dims = None;
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            return Err(frames_err(
                path,
                format!("irregular numbering: expected frame {expected}"),
            ));
        }
        let img = image::open(path)
            .map_err(|e| frames_err(path, e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(frames_err(
                    path,
                    format!("dimension mismatch: {w}×{h}, expected {}×{}", d.0, d.1),
                ))
            }
            _ => {}
        }
        frames.push(RgbFrame::from_bytes(h as usize, w as usize, img.as_raw())?);
    }
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabVideoClip::from_rgb(&frames, id, 24.0)
}
