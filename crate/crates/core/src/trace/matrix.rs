use serde::Serialize;

use super::{EpisodeTrace, TraceError};

/// H×T grid of hidden-state values: one row per memory dimension, one column
/// per time step.
///
/// Rows are stored in a fixed layout; `dim_order` is the display permutation
/// over stored rows. `dim_ids` maps stored rows back to hidden-vector indices
/// of the source episode and `t_offset` maps columns back to its time steps,
/// so slices keep their provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryMatrix {
    episode_id: String,
    dims: usize,
    steps: usize,
    values: Vec<f64>,
    dim_ids: Vec<usize>,
    dim_order: Vec<usize>,
    t_offset: usize,
}

/// Stacks the hidden states of `episode` column by column.
pub fn memory_matrix(episode: &EpisodeTrace) -> MemoryMatrix {
    let dims = episode.memory_dims;
    let steps = episode.steps.len();
    let mut values = vec![0.0; dims * steps];
    for (t, step) in episode.steps.iter().enumerate() {
        for (i, &h) in step.hidden.iter().enumerate().take(dims) {
            values[i * steps + t] = h;
        }
    }
    MemoryMatrix {
        episode_id: episode.id.clone(),
        dims,
        steps,
        values,
        dim_ids: (0..dims).collect(),
        dim_order: (0..dims).collect(),
        t_offset: 0,
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), TraceError> {
    if order.len() != n {
        return Err(TraceError::Range(format!(
            "order has {} entries for {n} rows",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(TraceError::Range(format!("{order:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

impl MemoryMatrix {
    /// Builds a matrix from explicit rows. All rows must share one length and
    /// hold values in `[-1, 1]`.
    pub fn from_rows(episode_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, TraceError> {
        let dims = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        if dims == 0 || steps == 0 {
            return Err(TraceError::Range("a memory matrix needs at least one cell".into()));
        }
        let mut values = Vec::with_capacity(dims * steps);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != steps {
                return Err(TraceError::Range(format!(
                    "row {i} has {} steps, expected {steps}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(TraceError::Range(format!("row {i} holds {v}, outside [-1, 1]")));
            }
            values.extend_from_slice(row);
        }
        Ok(MemoryMatrix {
            episode_id: episode_id.into(),
            dims,
            steps,
            values,
            dim_ids: (0..dims).collect(),
            dim_order: (0..dims).collect(),
            t_offset: 0,
        })
    }

    pub fn episode_id(&self) -> &str {
        &self.episode_id
    }

    /// Number of rows (memory dimensions).
    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of columns (time steps).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_offset(&self) -> usize {
        self.t_offset
    }

    pub fn dim_ids(&self) -> &[usize] {
        &self.dim_ids
    }

    pub fn dim_order(&self) -> &[usize] {
        &self.dim_order
    }

    /// Value of stored row `row` at column `t`.
    pub fn value(&self, row: usize, t: usize) -> f64 {
        self.values[row * self.steps + t]
    }

    /// Stored row `row` as a slice over columns.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.steps..(row + 1) * self.steps]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.dims).map(|i| self.value(i, t)).collect()
    }

    /// Row shown at display position `pos`.
    pub fn display_row(&self, pos: usize) -> &[f64] {
        self.row(self.dim_order[pos])
    }

    pub fn display_value(&self, pos: usize, t: usize) -> f64 {
        self.value(self.dim_order[pos], t)
    }

    /// Replaces the display order.
    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self, TraceError> {
        check_permutation(&order, self.dims)?;
        self.dim_order = order;
        Ok(self)
    }

    /// Steps × dims grid in display order, with fresh provenance.
    pub fn transpose(&self) -> MemoryMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.steps {
            values.extend(self.dim_order.iter().map(|&row| self.value(row, t)));
        }
        MemoryMatrix {
            episode_id: self.episode_id.clone(),
            dims: self.steps,
            steps: self.dims,
            values,
            dim_ids: (0..self.steps).collect(),
            dim_order: (0..self.steps).collect(),
            t_offset: 0,
        }
    }

    /// Columns `t0..=t1`, keeping the display order.
    pub fn slice_time(&self, t0: usize, t1: usize) -> Result<MemoryMatrix, TraceError> {
        if t0 > t1 || t1 >= self.steps {
            return Err(TraceError::Range(format!(
                "time interval [{t0}, {t1}] outside [0, {}]",
                self.steps as isize - 1
            )));
        }
        let width = t1 - t0 + 1;
        let mut values = Vec::with_capacity(self.dims * width);
        for row in 0..self.dims {
            values.extend_from_slice(&self.row(row)[t0..=t1]);
        }
        Ok(MemoryMatrix {
            episode_id: self.episode_id.clone(),
            dims: self.dims,
            steps: width,
            values,
            dim_ids: self.dim_ids.clone(),
            dim_order: self.dim_order.clone(),
            t_offset: self.t_offset + t0,
        })
    }

    /// Display rows `r0..=r1`. The result stores them in display order.
    pub fn slice_dims(&self, r0: usize, r1: usize) -> Result<MemoryMatrix, TraceError> {
        if r0 > r1 || r1 >= self.dims {
            return Err(TraceError::Range(format!(
                "row range [{r0}, {r1}] outside [0, {}]",
                self.dims as isize - 1
            )));
        }
        let picked = &self.dim_order[r0..=r1];
        let mut values = Vec::with_capacity(picked.len() * self.steps);
        for &row in picked {
            values.extend_from_slice(self.row(row));
        }
        Ok(MemoryMatrix {
            episode_id: self.episode_id.clone(),
            dims: picked.len(),
            steps: self.steps,
            values,
            dim_ids: picked.iter().map(|&row| self.dim_ids[row]).collect(),
            dim_order: (0..picked.len()).collect(),
            t_offset: self.t_offset,
        })
    }
}
