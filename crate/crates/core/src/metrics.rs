//! Per-step metrics derived from a trace.
//!
//! Angles follow one convention throughout: orientations are degrees
//! counter-clockwise from +x, and angles relative to the agent's heading are
//! wrapped into `(-180, 180]` and reported negative to the left.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{EpisodeTrace, ItemKind, Point, FOV_HALF_WIDTH, PROB_SUM_TOLERANCE};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Series names emitted by [`derive_all`].
pub mod names {
    pub const HEALTH: &str = "health";
    pub const EVENT: &str = "event";
    pub const ITEM_IN_FOV: &str = "item_in_fov";
    pub const ORIENTATION_TO_ITEM: &str = "orientation_to_item";
    pub const ORIENTATION_VARIATION: &str = "orientation_variation";
    pub const AMBIGUITY: &str = "ambiguity";

    /// Name of the per-kind item-in-view series.
    pub fn item_in_fov_of(kind: &str) -> String {
        format!("{ITEM_IN_FOV}:{kind}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Quantitative,
    Binary,
    Flag,
    Degrees,
    Ratio,
}

/// One value per time step; `None` where the metric is undefined (flags that
/// are not raised, orientation when nothing is in view).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub kind: MetricKind,
    pub values: Vec<Option<f64>>,
    pub display_range: (f64, f64),
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let r = angle.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Normalizes an orientation into `[0, 360)`.
pub fn normalize_orientation(angle: f64) -> f64 {
    let r = angle.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// `1 - V`, where `V` is the population variance of the probabilities.
///
/// A uniform vector gives 1 (maximal uncertainty); a one-hot vector over `n`
/// actions gives `1 - (n - 1) / n²`.
pub fn ambiguity(probs: &[f64]) -> Result<f64, MetricError> {
    let n = probs.len();
    if n < 2 {
        return Err(MetricError::Domain(format!(
            "ambiguity needs at least 2 actions, got {n}"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(MetricError::Domain(format!("not a probability vector (sum {sum})")));
    }
    let mean = 1.0 / n as f64;
    let variance = probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n as f64;
    Ok(1.0 - variance)
}

/// Mean absolute wrapped change of orientation over three consecutive steps.
pub fn orientation_variation(prev2: f64, prev: f64, now: f64) -> f64 {
    (wrap_degrees(now - prev).abs() + wrap_degrees(prev - prev2).abs()) / 2.0
}

/// Angle from the agent's heading to an item: 0 dead ahead, negative to the
/// left, positive to the right.
pub fn orientation_to_item(agent: Point, orientation: f64, item: Point) -> Result<f64, MetricError> {
    let (dx, dy) = (item[0] - agent[0], item[1] - agent[1]);
    if dx == 0.0 && dy == 0.0 {
        return Err(MetricError::Domain("item and agent positions coincide".into()));
    }
    Ok(-wrap_degrees(dy.atan2(dx).to_degrees() - orientation))
}

/// Whether an item lies inside the 90° field of view. Occlusion is not
/// modeled; an item at the agent's own position has no bearing and is not in
/// view.
pub fn item_in_fov(agent: Point, orientation: f64, item: Point) -> bool {
    orientation_to_item(agent, orientation, item).is_ok_and(|a| a.abs() <= FOV_HALF_WIDTH)
}

fn distance2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Computes the derived metric series of an episode.
///
/// The six base series come first (health, event, item in view, orientation to
/// the nearest item in view, orientation variation, ambiguity), followed by
/// one item-in-view series per item kind seen in the episode. The recorded
/// `items_in_fov` lists decide visibility.
pub fn derive_all(episode: &EpisodeTrace) -> Vec<MetricSeries> {
    let steps = &episode.steps;
    let series = |name: &str, kind, values, display_range| MetricSeries {
        name: name.to_owned(),
        kind,
        values,
        display_range,
    };

    let health = steps.iter().map(|s| Some(s.health)).collect();
    let event = steps.iter().map(|s| s.event.as_ref().map(|_| 1.0)).collect();
    let in_fov = steps
        .iter()
        .map(|s| Some(if s.items_in_fov.is_empty() { 0.0 } else { 1.0 }))
        .collect();
    let to_item = steps
        .iter()
        .map(|s| {
            let nearest = s
                .items_in_fov
                .iter()
                .min_by(|a, b| distance2(s.pos, a.pos).total_cmp(&distance2(s.pos, b.pos)))?;
            Some(orientation_to_item(s.pos, s.orientation, nearest.pos).unwrap_or(nearest.bearing))
        })
        .collect();
    let variation = (0..steps.len())
        .map(|t| {
            Some(if t < 2 {
                0.0
            } else {
                orientation_variation(steps[t - 2].orientation, steps[t - 1].orientation, steps[t].orientation)
            })
        })
        .collect();
    let ambiguity = steps.iter().map(|s| ambiguity(&s.action_probs).ok()).collect();

    let mut out = vec![
        series(names::HEALTH, MetricKind::Quantitative, health, (0.0, 100.0)),
        series(names::EVENT, MetricKind::Flag, event, (0.0, 1.0)),
        series(names::ITEM_IN_FOV, MetricKind::Binary, in_fov, (0.0, 1.0)),
        series(names::ORIENTATION_TO_ITEM, MetricKind::Degrees, to_item, (-45.0, 45.0)),
        series(
            names::ORIENTATION_VARIATION,
            MetricKind::Quantitative,
            variation,
            (0.0, 30.0),
        ),
        series(names::AMBIGUITY, MetricKind::Ratio, ambiguity, (0.0, 1.0)),
    ];

    let kinds: BTreeSet<&ItemKind> = steps
        .iter()
        .flat_map(|s| s.items_in_fov.iter().map(|i| &i.kind))
        .collect();
    for kind in kinds {
        let values = steps
            .iter()
            .map(|s| {
                Some(if s.items_in_fov.iter().any(|i| &i.kind == kind) {
                    1.0
                } else {
                    0.0
                })
            })
            .collect();
        out.push(series(
            &names::item_in_fov_of(kind.as_str()),
            MetricKind::Binary,
            values,
            (0.0, 1.0),
        ));
    }
    out
}

/// Looks up a series by name.
pub fn find<'a>(series: &'a [MetricSeries], name: &str) -> Option<&'a MetricSeries> {
    series.iter().find(|s| s.name == name)
}
