//! Synthetic first-person frames for generated traces.
//!
//! Each frame shows a ceiling, a floor, and every item in view as a vertical
//! bar placed by bearing and scaled by inverse distance.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::MaskLabError;
use crate::trace::{EpisodeTrace, ItemKind, Step, FOV_HALF_WIDTH};

pub const FRAME_WIDTH: u32 = 64;
pub const FRAME_HEIGHT: u32 = 48;

const CEILING: Rgb<u8> = Rgb([70, 70, 90]);
const FLOOR: Rgb<u8> = Rgb([110, 90, 60]);

fn color(kind: &ItemKind) -> Rgb<u8> {
    match kind {
        ItemKind::GreenArmor => Rgb([40, 200, 60]),
        ItemKind::RedArmor => Rgb([210, 40, 40]),
        ItemKind::HealthPack => Rgb([240, 240, 240]),
        ItemKind::SoulSphere => Rgb([60, 90, 230]),
        ItemKind::Custom(_) => Rgb([230, 200, 40]),
    }
}

/// Renders the view at one recorded step.
pub fn render_frame(step: &Step) -> RgbImage {
    let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
    let mut img = RgbImage::from_fn(w, h, |_, y| if y < h / 2 { CEILING } else { FLOOR });
    // Far items first so near ones are drawn on top.
    let mut items: Vec<_> = step
        .items_in_fov
        .iter()
        .map(|s| ((s.pos[0] - step.pos[0]).hypot(s.pos[1] - step.pos[1]), s))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (distance, sighting) in items {
        let center = (sighting.bearing / FOV_HALF_WIDTH + 1.0) / 2.0 * (w - 1) as f64;
        let bar_h = (h as f64 * 2.0 / distance.max(1.0)).clamp(2.0, h as f64);
        let bar_w = (bar_h / 3.0).max(1.0);
        let x0 = (center - bar_w / 2.0).round().max(0.0) as u32;
        let x1 = ((center + bar_w / 2.0).round() as u32).min(w - 1);
        let y0 = ((h as f64 - bar_h) / 2.0).round().max(0.0) as u32;
        let y1 = ((h as f64 + bar_h) / 2.0).round().min((h - 1) as f64) as u32;
        for x in x0..=x1 {
            for y in y0..=y1 {
                img.put_pixel(x, y, color(&sighting.kind));
            }
        }
    }
    img
}

/// Writes one PNG per step under `root/frames/<episode id>/` and points each
/// step's `frame_ref` at it, relative to `root`.
pub fn write_frames(episode: &mut EpisodeTrace, root: &Path) -> Result<(), MaskLabError> {
    let rel_dir = Path::new("frames").join(&episode.id);
    fs::create_dir_all(root.join(&rel_dir))?;
    for step in &mut episode.steps {
        let rel = rel_dir.join(format!("{:04}.png", step.t));
        render_frame(step)
            .save(root.join(&rel))
            .map_err(|e| MaskLabError::Trace(e.into()))?;
        step.frame_ref = Some(rel.to_string_lossy().replace('\\', "/"));
    }
    Ok(())
}
