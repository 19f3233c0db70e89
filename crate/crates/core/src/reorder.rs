//! Scoring and re-ordering of memory dimensions.
//!
//! Every criterion produces one score per row and a stable ranking: rows are
//! sorted by score (descending, except `stable` which is ascending by
//! `change`), and equal scores keep their original index order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{self, ProjectionConfig, ProjectionError};
use crate::trace::MemoryMatrix;

/// Fewest rows accepted by the 1D projection ordering.
pub const MIN_TSNE_ROWS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ReorderError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Sum of absolute activations.
    Activation,
    /// Sum of absolute consecutive differences.
    Change,
    /// Ascending `change`.
    Stable,
    /// Difference between the mean inside an interval and outside it.
    Similar,
    /// 1D t-SNE of the rows' absolute values.
    Tsne1d,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Activation,
        Criterion::Change,
        Criterion::Stable,
        Criterion::Similar,
        Criterion::Tsne1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Activation => "activation",
            Criterion::Change => "change",
            Criterion::Stable => "stable",
            Criterion::Similar => "similar",
            Criterion::Tsne1d => "tsne1d",
        }
    }

    /// Whether larger scores rank first.
    pub fn descending(self) -> bool {
        !matches!(self, Criterion::Stable | Criterion::Tsne1d)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = ReorderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ReorderError::Usage(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorderResult {
    pub criterion: Criterion,
    pub interval: Option<[usize; 2]>,
    /// One score per stored row of the matrix.
    pub scores: Vec<f64>,
    /// Stored row indices, best first.
    pub order: Vec<usize>,
}

pub fn score_activation(row: &[f64]) -> f64 {
    row.iter().map(|v| v.abs()).sum()
}

/// Zero for rows shorter than two steps.
pub fn score_change(row: &[f64]) -> f64 {
    row.windows(2).map(|w| (w[0] - w[1]).abs()).sum()
}

/// Rank key of the `stable` criterion; ranked ascending. No reciprocal is
/// taken, so constant rows are well defined.
pub fn score_stable(row: &[f64]) -> f64 {
    score_change(row)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `|mean(row[t0..=t1]) - mean(rest of row)|`.
pub fn score_similar(row: &[f64], t0: usize, t1: usize) -> Result<f64, ReorderError> {
    if t0 > t1 || t1 >= row.len() {
        return Err(ReorderError::Range(format!(
            "interval [{t0}, {t1}] outside a row of {} steps",
            row.len()
        )));
    }
    if t0 == 0 && t1 + 1 == row.len() {
        return Err(ReorderError::Domain(
            "interval covers every step; its complement is empty".into(),
        ));
    }
    let inside = mean(&row[t0..=t1]);
    let outside =
        (row[..t0].iter().sum::<f64>() + row[t1 + 1..].iter().sum::<f64>()) / (row.len() - (t1 - t0 + 1)) as f64;
    Ok((inside - outside).abs())
}

/// Stable ranking of row indices by score.
pub fn rank(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = scores[a].total_cmp(&scores[b]);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    order
}

fn check_interval(m: &MemoryMatrix, interval: Option<[usize; 2]>) -> Result<(), ReorderError> {
    match interval {
        Some([t0, t1]) if t0 > t1 || t1 >= m.steps() => Err(ReorderError::Range(format!(
            "interval [{t0}, {t1}] outside [0, {}]",
            m.steps() - 1
        ))),
        _ => Ok(()),
    }
}

/// Scores every row of `m` and ranks them. `interval` is required by
/// `similar`; for the other criteria it restricts scoring to those columns.
pub fn reorder(
    m: &MemoryMatrix,
    criterion: Criterion,
    interval: Option<[usize; 2]>,
) -> Result<ReorderResult, ReorderError> {
    check_interval(m, interval)?;
    let scope = |row: usize| match interval {
        Some([t0, t1]) => &m.row(row)[t0..=t1],
        None => m.row(row),
    };
    let scores: Vec<f64> = match criterion {
        Criterion::Activation => (0..m.dims()).map(|r| score_activation(scope(r))).collect(),
        Criterion::Change => (0..m.dims()).map(|r| score_change(scope(r))).collect(),
        Criterion::Stable => (0..m.dims()).map(|r| score_stable(scope(r))).collect(),
        Criterion::Similar => {
            let [t0, t1] =
                interval.ok_or_else(|| ReorderError::Usage("the similar criterion needs an interval".into()))?;
            (0..m.dims())
                .map(|r| score_similar(m.row(r), t0, t1))
                .collect::<Result<_, _>>()?
        }
        Criterion::Tsne1d => {
            let sliced;
            let scoped = match interval {
                Some([t0, t1]) => {
                    sliced = m.slice_time(t0, t1).expect("interval checked");
                    &sliced
                }
                None => m,
            };
            let mut result = order_tsne1d(scoped, 0)?;
            result.interval = interval;
            return Ok(result);
        }
    };
    let order = rank(&scores, criterion.descending());
    Ok(ReorderResult {
        criterion,
        interval,
        scores,
        order,
    })
}

/// Orders rows by a 1D t-SNE of their absolute values, ascending coordinate.
/// The scores are the projected coordinates.
pub fn order_tsne1d(m: &MemoryMatrix, seed: u64) -> Result<ReorderResult, ReorderError> {
    if m.dims() < MIN_TSNE_ROWS {
        return Err(ReorderError::Domain(format!(
            "1D projection needs at least {MIN_TSNE_ROWS} rows, got {}",
            m.dims()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..m.dims())
        .map(|r| m.row(r).iter().map(|v| v.abs()).collect())
        .collect();
    let config = ProjectionConfig {
        out_dims: 1,
        seed,
        ..ProjectionConfig::default()
    };
    let projection = projection::tsne(&rows, &config)?;
    let scores: Vec<f64> = projection.points.iter().map(|p| p[0]).collect();
    let order = rank(&scores, false);
    Ok(ReorderResult {
        criterion: Criterion::Tsne1d,
        interval: None,
        scores,
        order,
    })
}
