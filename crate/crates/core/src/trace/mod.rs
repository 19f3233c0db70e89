//! Episode traces: the data model, the JSON format and validation.
//!
//! One episode is stored per file (`episode_<id>.json`). Frames and saliency
//! maps are sidecar PNG files referenced by relative path.

mod matrix;
mod slit;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use matrix::{memory_matrix, MemoryMatrix};
pub use slit::{pool_patch, slit_square, Patch, PixelRect, DEFAULT_CELL};

/// Longest episode accepted by default, in steps.
pub const DEFAULT_TIMEOUT: usize = 525;

/// Tolerance on the sum of an action distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Half-width of the field of view, in degrees.
pub const FOV_HALF_WIDTH: f64 = 45.0;

/// The navigation action set, in index order.
pub const DEFAULT_ACTION_LABELS: [&str; 5] = ["forward", "forward+right", "right", "left", "forward+left"];

/// A position in world units.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("validation error at `{path}`: {message}")]
    Validation {
        path: String,
        step: Option<usize>,
        message: String,
    },
    #[error("out of range: {0}")]
    Range(String),
    #[error("frames unavailable: first missing frame at step {step}")]
    MissingFrame { step: usize },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl TraceError {
    fn invalid(path: impl Into<String>, step: Option<usize>, message: impl Into<String>) -> Self {
        TraceError::Validation {
            path: path.into(),
            step,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Kind of a collectible item. Unknown names are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemKind {
    GreenArmor,
    RedArmor,
    HealthPack,
    SoulSphere,
    Custom(String),
}

impl ItemKind {
    pub fn parse(name: &str) -> Self {
        match name {
            "green_armor" => ItemKind::GreenArmor,
            "red_armor" => ItemKind::RedArmor,
            "health_pack" => ItemKind::HealthPack,
            "soul_sphere" => ItemKind::SoulSphere,
            other => ItemKind::Custom(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ItemKind::GreenArmor => "green_armor",
            ItemKind::RedArmor => "red_armor",
            ItemKind::HealthPack => "health_pack",
            ItemKind::SoulSphere => "soul_sphere",
            ItemKind::Custom(name) => name,
        }
    }
}

impl fmt::Display for ItemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ItemKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ItemKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(ItemKind::parse(&name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapBounds {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl MapBounds {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        MapBounds { xmin, ymin, xmax, ymax }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(self.xmin, self.xmax), p[1].clamp(self.ymin, self.ymax)]
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
}

/// An item visible from the agent at some step. `bearing` is signed degrees,
/// negative to the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSighting {
    pub kind: ItemKind,
    pub pos: Point,
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub pos: Point,
    /// Degrees in `[0, 360)`, counter-clockwise from +x.
    pub orientation: f64,
    pub health: f64,
    pub reward: f64,
    pub action_probs: Vec<f64>,
    pub action: usize,
    pub hidden: Vec<f64>,
    pub items_in_fov: Vec<ItemSighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_ref: Option<String>,
}

/// One recorded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub id: String,
    pub env_name: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub action_labels: Vec<String>,
    pub memory_dims: usize,
    pub map_bounds: MapBounds,
    pub steps: Vec<Step>,
}

/// Non-fatal finding produced during validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceWarning {
    /// The recorded action is not the most probable one.
    NonGreedyAction { step: usize, action: usize, argmax: usize },
}

impl fmt::Display for TraceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceWarning::NonGreedyAction { step, action, argmax } => write!(
                f,
                "steps[{step}].action is {action} but the most probable action is {argmax}"
            ),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Maximum number of steps.
    pub timeout: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Index of the largest probability; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self) -> Result<Vec<TraceWarning>, TraceError> {
        self.validate_with(&ValidationOptions::default())
    }

    /// Checks every invariant of the trace; returns the warnings on success.
    pub fn validate_with(&self, opts: &ValidationOptions) -> Result<Vec<TraceWarning>, TraceError> {
        if self.steps.is_empty() {
            return Err(TraceError::invalid("steps", None, "an episode needs at least one step"));
        }
        if self.steps.len() > opts.timeout {
            return Err(TraceError::invalid(
                "steps",
                None,
                format!("{} steps exceed the timeout of {}", self.steps.len(), opts.timeout),
            ));
        }
        if self.action_labels.is_empty() {
            return Err(TraceError::invalid("action_labels", None, "no action labels"));
        }
        if self.memory_dims == 0 {
            return Err(TraceError::invalid("memory_dims", None, "memory_dims must be positive"));
        }
        let b = &self.map_bounds;
        if ![b.xmin, b.ymin, b.xmax, b.ymax].iter().all(|v| v.is_finite()) || b.xmin >= b.xmax || b.ymin >= b.ymax {
            return Err(TraceError::invalid(
                "map_bounds",
                None,
                "degenerate or non-finite rectangle",
            ));
        }

        let n_actions = self.action_labels.len();
        let mut warnings = Vec::new();
        for (k, step) in self.steps.iter().enumerate() {
            let at = |field: &str| format!("steps[{k}].{field}");
            let fail = |field: &str, msg: String| Err(TraceError::invalid(at(field), Some(k), msg));

            if step.t != k {
                return fail("t", format!("expected t = {k}, found {}", step.t));
            }
            if !step.pos.iter().all(|v| v.is_finite()) {
                return fail("pos", "non-finite position".into());
            }
            if !(step.orientation.is_finite() && (0.0..360.0).contains(&step.orientation)) {
                return fail("orientation", format!("{} is outside [0, 360)", step.orientation));
            }
            if !(step.health.is_finite() && (0.0..=100.0).contains(&step.health)) {
                return fail("health", format!("{} is outside [0, 100]", step.health));
            }
            if !step.reward.is_finite() {
                return fail("reward", "non-finite reward".into());
            }
            if step.action_probs.len() != n_actions {
                return fail(
                    "action_probs",
                    format!("length {} but there are {n_actions} actions", step.action_probs.len()),
                );
            }
            if let Some(i) = step.action_probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
                return fail(
                    &format!("action_probs[{i}]"),
                    "probabilities must be finite and >= 0".into(),
                );
            }
            let sum: f64 = step.action_probs.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return fail("action_probs", format!("probabilities sum to {sum}, not 1"));
            }
            if step.action >= n_actions {
                return fail("action", format!("index {} out of {n_actions} actions", step.action));
            }
            if step.hidden.len() != self.memory_dims {
                return fail(
                    "hidden",
                    format!("length {} but memory_dims is {}", step.hidden.len(), self.memory_dims),
                );
            }
            if let Some(i) = step
                .hidden
                .iter()
                .position(|h| !h.is_finite() || !(-1.0..=1.0).contains(h))
            {
                return fail(
                    &format!("hidden[{i}]"),
                    format!("{} is outside [-1, 1]", step.hidden[i]),
                );
            }
            for (j, item) in step.items_in_fov.iter().enumerate() {
                if !item.pos.iter().all(|v| v.is_finite()) {
                    return fail(&format!("items_in_fov[{j}].pos"), "non-finite position".into());
                }
                if !item.bearing.is_finite() || item.bearing.abs() > FOV_HALF_WIDTH {
                    return fail(
                        &format!("items_in_fov[{j}].bearing"),
                        format!("{} is outside the field of view", item.bearing),
                    );
                }
            }

            let best = argmax(&step.action_probs);
            if step.action_probs[step.action] < step.action_probs[best] {
                warnings.push(TraceWarning::NonGreedyAction {
                    step: k,
                    action: step.action,
                    argmax: best,
                });
            }
        }
        Ok(warnings)
    }
}

/// Parses and validates one episode document.
pub fn parse_episode(bytes: &[u8]) -> Result<EpisodeTrace, TraceError> {
    let (episode, warnings) = parse_episode_with(bytes, &ValidationOptions::default())?;
    for w in &warnings {
        log::warn!("episode {}: {w}", episode.id);
    }
    Ok(episode)
}

pub fn parse_episode_with(
    bytes: &[u8],
    opts: &ValidationOptions,
) -> Result<(EpisodeTrace, Vec<TraceWarning>), TraceError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let episode: EpisodeTrace = serde_path_to_error::deserialize(&mut de).map_err(|err| TraceError::Parse {
        path: err.path().to_string(),
        message: err.inner().to_string(),
    })?;
    de.end().map_err(|err| TraceError::Parse {
        path: ".".into(),
        message: err.to_string(),
    })?;
    let warnings = episode.validate_with(opts)?;
    Ok((episode, warnings))
}

/// Canonical JSON encoding: sorted keys, shortest round-trip floats, absent
/// optional fields omitted.
pub fn serialize_episode(episode: &EpisodeTrace) -> Vec<u8> {
    crate::canonical::to_vec(episode).expect("episode traces always serialize")
}

/// File name under which an episode is stored.
pub fn episode_file_name(id: &str) -> String {
    format!("episode_{id}.json")
}
