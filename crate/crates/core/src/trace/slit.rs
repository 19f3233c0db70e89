//! Slit squares: a brushed rectangle of every input frame, area-averaged down
//! to a small fixed-size cell so that it fits the shared timeline width.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{EpisodeTrace, TraceError};

/// Default cell size (width, height) of one summarized frame.
pub const DEFAULT_CELL: (u32, u32) = (8, 8);

/// Rectangle in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Patch {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB pixels.
    pub pixels: Vec<[u8; 3]>,
}

impl Patch {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Overlap weights of unit source pixels with each of `cells` equal parts of
/// `[start, start + len)`.
fn coverage(start: u32, len: u32, cells: u32) -> Vec<Vec<(u32, f64)>> {
    let step = len as f64 / cells as f64;
    (0..cells)
        .map(|c| {
            let lo = c as f64 * step;
            let hi = lo + step;
            let first = lo.floor() as u32;
            let last = (hi.ceil() as u32).min(len);
            (first..last)
                .filter_map(|p| {
                    let w = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
                    (w > 0.0).then_some((start + p, w))
                })
                .collect()
        })
        .collect()
}

/// Area-averages `rect` of `img` into a `cell.0 × cell.1` patch.
pub fn pool_patch(img: &RgbImage, rect: PixelRect, cell: (u32, u32)) -> Result<Patch, TraceError> {
    let (w, h) = img.dimensions();
    if rect.width == 0 || rect.height == 0 || cell.0 == 0 || cell.1 == 0 {
        return Err(TraceError::Range("empty rectangle or cell".into()));
    }
    if rect.x + rect.width > w || rect.y + rect.height > h {
        return Err(TraceError::Range(format!(
            "rectangle {rect:?} exceeds the {w}x{h} frame"
        )));
    }
    let cols = coverage(rect.x, rect.width, cell.0);
    let rows = coverage(rect.y, rect.height, cell.1);
    let mut pixels = Vec::with_capacity((cell.0 * cell.1) as usize);
    for row in &rows {
        for col in &cols {
            let mut acc = [0.0f64; 3];
            let mut total = 0.0;
            for &(py, wy) in row {
                for &(px, wx) in col {
                    let weight = wx * wy;
                    let p = img.get_pixel(px, py).0;
                    for c in 0..3 {
                        acc[c] += weight * p[c] as f64;
                    }
                    total += weight;
                }
            }
            pixels.push(acc.map(|v| (v / total).round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(Patch {
        width: cell.0,
        height: cell.1,
        pixels,
    })
}

/// Summarizes `rect` of every frame of `episode`. Frame paths are resolved
/// against `root`.
pub fn slit_square(
    episode: &EpisodeTrace,
    rect: PixelRect,
    root: &Path,
    cell: (u32, u32),
) -> Result<Vec<Patch>, TraceError> {
    let mut paths = Vec::with_capacity(episode.steps.len());
    for step in &episode.steps {
        match &step.frame_ref {
            Some(rel) if root.join(rel).is_file() => paths.push(root.join(rel)),
            _ => return Err(TraceError::MissingFrame { step: step.t }),
        }
    }
    paths
        .iter()
        .map(|path| {
            let img = image::open(path)?.to_rgb8();
            pool_patch(&img, rect, cell)
        })
        .collect()
}
