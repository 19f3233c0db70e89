//! Boolean filters over the time steps of one episode.
//!
//! Expressions combine per-step predicates (metric thresholds, actions,
//! events, time intervals, map rectangles, projection lassos, memory brushes)
//! with `and`, `or` and `not`, and evaluate to a [`StepSet`].
//!
//! JSON form: `{"op":"and"|"or"|"not","children":[...]}` for operators and
//! `{"pred":"<kind>", ...}` for predicates, for example
//! `{"pred":"metric_threshold","name":"health","cmp":">","value":50}`.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::metrics::{self, MetricSeries};
use crate::projection::Projection;
use crate::trace::{memory_matrix, EpisodeTrace, MemoryMatrix, Point};

/// Deepest expression tree accepted.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown projection `{0}`")]
    UnknownProjection(String),
    #[error("invalid query at `{path}`: {message}")]
    Validation { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> QueryError {
    QueryError::Validation {
        path: if path.is_empty() { ".".into() } else { path.to_owned() },
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pred", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// Steps where the metric is defined and compares true against `value`.
    MetricThreshold {
        name: String,
        cmp: Cmp,
        value: f64,
    },
    /// Steps where the metric is defined and non-zero.
    MetricBinary {
        name: String,
    },
    ActionIs {
        index: usize,
    },
    EventIs {
        event: String,
    },
    /// Inclusive `[t0, t1]`.
    TimeInterval {
        interval: [usize; 2],
    },
    /// Agent position inside the rectangle, edges included.
    SpatialRect {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    /// Steps whose projected point lies inside the polygon.
    Lasso {
        polygon: Vec<Point>,
        projection: String,
    },
    /// Steps where some display row in `dims` holds a value in `values`.
    MemoryBrush {
        dims: [usize; 2],
        values: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryExpr {
    And(Vec<QueryExpr>),
    Or(Vec<QueryExpr>),
    Not(Box<QueryExpr>),
    Pred(Predicate),
}

impl QueryExpr {
    pub fn pred(p: Predicate) -> Self {
        QueryExpr::Pred(p)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: QueryExpr) -> Self {
        QueryExpr::Not(Box::new(e))
    }

    pub fn depth(&self) -> usize {
        match self {
            QueryExpr::And(c) | QueryExpr::Or(c) => 1 + c.iter().map(Self::depth).max().unwrap_or(0),
            QueryExpr::Not(c) => 1 + c.depth(),
            QueryExpr::Pred(_) => 1,
        }
    }

    /// Checks structure: depth, non-empty operators, well-formed predicates.
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.depth() > MAX_DEPTH {
            return Err(invalid(".", format!("expression deeper than {MAX_DEPTH}")));
        }
        self.validate_at("")
    }

    fn validate_at(&self, path: &str) -> Result<(), QueryError> {
        match self {
            QueryExpr::And(children) | QueryExpr::Or(children) => {
                if children.is_empty() {
                    return Err(invalid(path, "and/or need at least one child"));
                }
                children
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, c)| c.validate_at(&format!("{path}.children[{i}]")))
            }
            QueryExpr::Not(child) => child.validate_at(&format!("{path}.children[0]")),
            QueryExpr::Pred(p) => validate_predicate(p, path),
        }
    }

    /// Parses the JSON form; errors name the offending JSON path.
    pub fn from_json(value: &Value) -> Result<Self, QueryError> {
        let expr = Self::from_value_at(value, "", 1)?;
        expr.validate()?;
        Ok(expr)
    }

    fn from_value_at(value: &Value, path: &str, depth: usize) -> Result<Self, QueryError> {
        if depth > MAX_DEPTH {
            return Err(invalid(path, format!("expression deeper than {MAX_DEPTH}")));
        }
        let obj = value.as_object().ok_or_else(|| invalid(path, "expected an object"))?;
        match (obj.get("op"), obj.get("pred")) {
            (Some(op), None) => {
                let op = op
                    .as_str()
                    .ok_or_else(|| invalid(&format!("{path}.op"), "expected a string"))?;
                if let Some(key) = obj.keys().find(|k| *k != "op" && *k != "children") {
                    return Err(invalid(&format!("{path}.{key}"), "unknown field"));
                }
                let children = obj
                    .get("children")
                    .and_then(Value::as_array)
                    .ok_or_else(|| invalid(&format!("{path}.children"), "expected an array"))?;
                let mut parsed = children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Self::from_value_at(c, &format!("{path}.children[{i}]"), depth + 1))
                    .collect::<Result<Vec<_>, _>>()?;
                match op {
                    "and" => Ok(QueryExpr::And(parsed)),
                    "or" => Ok(QueryExpr::Or(parsed)),
                    "not" if parsed.len() == 1 => Ok(QueryExpr::not(parsed.remove(0))),
                    "not" => Err(invalid(&format!("{path}.children"), "not takes exactly one child")),
                    other => Err(invalid(&format!("{path}.op"), format!("unknown operator `{other}`"))),
                }
            }
            (None, Some(_)) => serde_path_to_error::deserialize::<_, Predicate>(value)
                .map(QueryExpr::Pred)
                .map_err(|err| {
                    let inner = err.path().to_string();
                    let full = if inner == "." {
                        path.to_owned()
                    } else {
                        format!("{path}.{inner}")
                    };
                    invalid(&full, err.into_inner().to_string())
                }),
            _ => Err(invalid(path, "expected exactly one of `op` or `pred`")),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            QueryExpr::And(c) => json!({"op": "and", "children": c.iter().map(Self::to_json).collect::<Vec<_>>()}),
            QueryExpr::Or(c) => json!({"op": "or", "children": c.iter().map(Self::to_json).collect::<Vec<_>>()}),
            QueryExpr::Not(c) => json!({"op": "not", "children": [c.to_json()]}),
            QueryExpr::Pred(p) => serde_json::to_value(p).expect("predicates serialize"),
        }
    }
}

fn validate_predicate(p: &Predicate, path: &str) -> Result<(), QueryError> {
    match p {
        Predicate::TimeInterval { interval: [t0, t1] } if t0 > t1 => {
            Err(invalid(&format!("{path}.interval"), "empty interval"))
        }
        Predicate::SpatialRect { xmin, ymin, xmax, ymax } if xmin > xmax || ymin > ymax => {
            Err(invalid(path, "empty rectangle"))
        }
        Predicate::Lasso { polygon, .. } if polygon.len() < 3 => Err(invalid(
            &format!("{path}.polygon"),
            "a polygon needs at least 3 vertices",
        )),
        Predicate::MemoryBrush { dims: [r0, r1], .. } if r0 > r1 => {
            Err(invalid(&format!("{path}.dims"), "empty row range"))
        }
        Predicate::MemoryBrush { values: [lo, hi], .. } if !ordered(*lo, *hi) => {
            Err(invalid(&format!("{path}.values"), "empty value range"))
        }
        _ => Ok(()),
    }
}

impl Serialize for QueryExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QueryExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        QueryExpr::from_json(&value).map_err(D::Error::custom)
    }
}

/// Sorted, duplicate-free time steps of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSet {
    pub episode_id: String,
    pub steps: Vec<usize>,
}

impl StepSet {
    fn from_mask(episode_id: &str, mask: &[bool]) -> Self {
        StepSet {
            episode_id: episode_id.to_owned(),
            steps: mask.iter().enumerate().filter_map(|(t, &on)| on.then_some(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl fmt::Display for StepSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}", self.episode_id, intervals_from_steps(self))
    }
}

/// A 2D projection of some of an episode's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSteps {
    pub steps: Vec<usize>,
    pub points: Vec<Point>,
}

impl ProjectedSteps {
    /// Attaches a projection computed over the listed steps, in that order.
    pub fn new(steps: Vec<usize>, projection: &Projection) -> Self {
        let points = projection
            .points
            .iter()
            .map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)])
            .collect();
        ProjectedSteps { steps, points }
    }
}

/// Everything predicates may refer to.
#[derive(Debug, Clone)]
pub struct QueryContext<'a> {
    pub episode: &'a EpisodeTrace,
    pub metrics: Vec<MetricSeries>,
    pub memory: MemoryMatrix,
    pub projections: BTreeMap<String, ProjectedSteps>,
}

impl<'a> QueryContext<'a> {
    /// Context with derived metrics and the memory matrix in stored order.
    pub fn for_episode(episode: &'a EpisodeTrace) -> Self {
        QueryContext {
            episode,
            metrics: metrics::derive_all(episode),
            memory: memory_matrix(episode),
            projections: BTreeMap::new(),
        }
    }

    pub fn with_projection(mut self, id: impl Into<String>, projected: ProjectedSteps) -> Self {
        self.projections.insert(id.into(), projected);
        self
    }
}

/// Evaluates `expr` over every step of the context's episode.
pub fn evaluate(expr: &QueryExpr, ctx: &QueryContext<'_>) -> Result<StepSet, QueryError> {
    expr.validate()?;
    let mask = eval_mask(expr, ctx)?;
    Ok(StepSet::from_mask(&ctx.episode.id, &mask))
}

fn eval_mask(expr: &QueryExpr, ctx: &QueryContext<'_>) -> Result<Vec<bool>, QueryError> {
    let n = ctx.episode.steps.len();
    match expr {
        QueryExpr::And(children) => {
            let mut acc = vec![true; n];
            for c in children {
                acc.iter_mut().zip(eval_mask(c, ctx)?).for_each(|(a, b)| *a &= b);
            }
            Ok(acc)
        }
        QueryExpr::Or(children) => {
            let mut acc = vec![false; n];
            for c in children {
                acc.iter_mut().zip(eval_mask(c, ctx)?).for_each(|(a, b)| *a |= b);
            }
            Ok(acc)
        }
        QueryExpr::Not(child) => Ok(eval_mask(child, ctx)?.into_iter().map(|b| !b).collect()),
        QueryExpr::Pred(p) => eval_predicate(p, ctx),
    }
}

fn series<'c>(ctx: &'c QueryContext<'_>, name: &str) -> Result<&'c MetricSeries, QueryError> {
    metrics::find(&ctx.metrics, name).ok_or_else(|| QueryError::UnknownMetric(name.to_owned()))
}

fn eval_predicate(p: &Predicate, ctx: &QueryContext<'_>) -> Result<Vec<bool>, QueryError> {
    let steps = &ctx.episode.steps;
    let n = steps.len();
    Ok(match p {
        Predicate::MetricThreshold { name, cmp, value } => series(ctx, name)?
            .values
            .iter()
            .map(|v| v.is_some_and(|v| cmp.holds(v, *value)))
            .collect(),
        Predicate::MetricBinary { name } => series(ctx, name)?
            .values
            .iter()
            .map(|v| v.is_some_and(|v| v != 0.0))
            .collect(),
        Predicate::ActionIs { index } => steps.iter().map(|s| s.action == *index).collect(),
        Predicate::EventIs { event } => steps.iter().map(|s| s.event.as_deref() == Some(event)).collect(),
        Predicate::TimeInterval { interval: [t0, t1] } => (0..n).map(|t| *t0 <= t && t <= *t1).collect(),
        Predicate::SpatialRect { xmin, ymin, xmax, ymax } => steps
            .iter()
            .map(|s| *xmin <= s.pos[0] && s.pos[0] <= *xmax && *ymin <= s.pos[1] && s.pos[1] <= *ymax)
            .collect(),
        Predicate::Lasso { polygon, projection } => {
            let projected = ctx
                .projections
                .get(projection)
                .ok_or_else(|| QueryError::UnknownProjection(projection.clone()))?;
            let mut mask = vec![false; n];
            for (&t, &pt) in projected.steps.iter().zip(&projected.points) {
                if t < n && point_in_polygon(pt, polygon) {
                    mask[t] = true;
                }
            }
            mask
        }
        Predicate::MemoryBrush { dims, values } => {
            let hits = memory_brush_steps(&ctx.memory, *dims, *values)?;
            let mut mask = vec![false; n];
            hits.steps.into_iter().filter(|&t| t < n).for_each(|t| mask[t] = true);
            mask
        }
    })
}

/// Steps (absolute, via the matrix's time offset) where at least one display
/// row in `dims` holds a value inside `values`. Both ranges are inclusive.
pub fn memory_brush_steps(m: &MemoryMatrix, dims: [usize; 2], values: [f64; 2]) -> Result<StepSet, QueryError> {
    let ([r0, r1], [lo, hi]) = (dims, values);
    if r0 > r1 || !ordered(lo, hi) {
        return Err(invalid(".", "empty brush range"));
    }
    if r1 >= m.dims() {
        return Err(invalid(".dims", format!("row {r1} outside 0..{}", m.dims())));
    }
    let steps = (0..m.steps())
        .filter(|&t| (r0..=r1).any(|pos| (lo..=hi).contains(&m.display_value(pos, t))))
        .map(|t| t + m.t_offset())
        .collect();
    Ok(StepSet {
        episode_id: m.episode_id().to_owned(),
        steps,
    })
}

/// `lo <= hi`, false when either is NaN.
fn ordered(lo: f64, hi: f64) -> bool {
    lo <= hi
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    cross.abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(pt: Point, polygon: &[Point]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        if on_segment(pt, a, b) {
            return true;
        }
        if (a[1] > pt[1]) != (b[1] > pt[1]) {
            let x_cross = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if pt[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Maximal runs of consecutive steps, as inclusive `[start, end]` pairs.
pub fn intervals_from_steps(set: &StepSet) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for &t in &set.steps {
        match out.last_mut() {
            Some(last) if last[1] + 1 == t => last[1] = t,
            _ => out.push([t, t]),
        }
    }
    out
}

/// Inverse of [`intervals_from_steps`].
pub fn expand_intervals(intervals: &[[usize; 2]]) -> Vec<usize> {
    intervals.iter().flat_map(|&[a, b]| a..=b).collect()
}
