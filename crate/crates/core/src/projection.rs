//! Exact t-SNE.
//!
//! Costs are O(N²) per iteration with no space partitioning; episodes have at
//! most a few hundred steps. Every run is deterministic given its seed: each
//! point's initial position comes from its own random stream keyed by
//! `(seed, key)`, and all sums are taken in a canonical point order, so
//! permuting the input (with its keys) permutes the output exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Probabilities are clamped from below to this value.
pub const MIN_PROB: f64 = 1e-12;
/// Maximum number of bisection steps when calibrating one row.
pub const MAX_CALIBRATION_STEPS: usize = 64;
/// Relative tolerance on the perplexity reached by calibration.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-4;
/// Standard deviation of the initial embedding.
pub const INIT_STD: f64 = 1e-4;
/// Iterations run with early exaggeration and the initial momentum.
pub const EXAGGERATION_ITERATIONS: usize = 250;
pub const INITIAL_MOMENTUM: f64 = 0.5;
pub const FINAL_MOMENTUM: f64 = 0.8;
/// Per-coordinate step gains: additive increase when the gradient sign flips
/// against the velocity, multiplicative decay otherwise, floored.
pub const GAIN_INCREASE: f64 = 0.2;
pub const GAIN_DECAY: f64 = 0.8;
pub const MIN_GAIN: f64 = 0.01;
/// Smallest input accepted by [`tsne`].
pub const MIN_POINTS: usize = 5;
/// Lower bound on the perplexity after clamping to the input size.
pub const MIN_PERPLEXITY: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// 1 or 2.
    pub out_dims: usize,
    /// Clamped to `(N - 1) / 3` (but never below 2) for `N` points.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Factor on P during the first 250 iterations.
    pub early_exaggeration: f64,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |msg: String| Err(ProjectionError::Validation(msg));
        if !matches!(self.out_dims, 1 | 2) {
            return bad(format!("out_dims must be 1 or 2, got {}", self.out_dims));
        }
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return bad(format!("perplexity must be positive, got {}", self.perplexity));
        }
        if self.iterations < EXAGGERATION_ITERATIONS {
            return bad(format!(
                "iterations must be at least {EXAGGERATION_ITERATIONS}, got {}",
                self.iterations
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.early_exaggeration.is_finite() && self.early_exaggeration > 0.0) {
            return bad(format!(
                "early_exaggeration must be positive, got {}",
                self.early_exaggeration
            ));
        }
        Ok(())
    }

    /// Perplexity actually used for `n` points.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0).max(MIN_PERPLEXITY)
    }

    /// Learning rate actually used for `n` points: the configured rate, capped
    /// at `n / early_exaggeration` so that small inputs do not overshoot.
    pub fn effective_learning_rate(&self, n: usize) -> f64 {
        self.learning_rate.min(n as f64 / self.early_exaggeration.max(1.0))
    }

    /// Stable identifier: a hash of the canonical JSON form.
    pub fn id(&self) -> String {
        let bytes = crate::canonical::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// One row of `out_dims` coordinates per input point, centered.
    pub points: Vec<Vec<f64>>,
    /// KL(P‖Q) at the initial embedding, without exaggeration.
    pub kl_initial: f64,
    pub kl_final: f64,
    pub config: ProjectionConfig,
}

/// Dense row-major N×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "data does not match an {n}x{n} matrix");
        SquareMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_dists(points: &[Vec<f64>]) -> SquareMatrix {
    let n = points.len();
    let mut d = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.data[i * n + j] = v;
            d.data[j * n + i] = v;
        }
    }
    d
}

/// Result of calibrating one conditional distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub probs: Vec<f64>,
    /// Gaussian precision `1 / (2σ²)`.
    pub beta: f64,
    /// Shannon entropy in nats; the perplexity is `exp(entropy)`.
    pub entropy: f64,
    /// Set when every distance was zero and a uniform row was returned.
    pub uniform_fallback: bool,
    pub converged: bool,
}

fn gaussian_row(dists: &[f64], dmin: f64, beta: f64) -> (Vec<f64>, f64) {
    let mut p: Vec<f64> = dists.iter().map(|d| (-(d - dmin) * beta).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let entropy = -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    (p, entropy)
}

/// Finds the Gaussian bandwidth whose conditional distribution over the given
/// neighbor distances has the requested perplexity.
pub fn calibrate_sigma(dists: &[f64], perplexity: f64) -> Calibration {
    let n = dists.len();
    if n == 0 || dists.iter().all(|d| *d <= 0.0) {
        let probs = vec![1.0 / n.max(1) as f64; n];
        return Calibration {
            probs,
            beta: 0.0,
            entropy: (n.max(1) as f64).ln(),
            uniform_fallback: true,
            converged: false,
        };
    }
    let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = dists.iter().map(|d| d - dmin).sum::<f64>() / n as f64;
    let target = perplexity.ln();
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut best = gaussian_row(dists, dmin, beta);
    let mut converged = false;
    for _ in 0..MAX_CALIBRATION_STEPS {
        let (probs, entropy) = gaussian_row(dists, dmin, beta);
        best = (probs, entropy);
        if (entropy.exp() - perplexity).abs() <= PERPLEXITY_TOLERANCE * perplexity {
            converged = true;
            break;
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let (probs, entropy) = best;
    Calibration {
        probs,
        beta,
        entropy,
        uniform_fallback: false,
        converged,
    }
}

/// Symmetrized joint probabilities `p_ij = (p_j|i + p_i|j) / 2N`.
pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> SquareMatrix {
    let n = points.len();
    let d = pairwise_sq_dists(points);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).collect();
            let cal = calibrate_sigma(&others, perplexity);
            if cal.uniform_fallback {
                log::warn!("t-SNE point {i}: all neighbor distances are zero, using a uniform row");
            }
            let mut row = Vec::with_capacity(n);
            row.extend_from_slice(&cal.probs[..i]);
            row.push(0.0);
            row.extend_from_slice(&cal.probs[i..]);
            row
        })
        .collect();
    let mut p = SquareMatrix::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &forward) in row.iter().enumerate() {
            if i != j {
                p.data[i * n + j] = ((forward + rows[j][i]) / (2.0 * n as f64)).max(MIN_PROB);
            }
        }
    }
    p
}

fn student_t_kernel(y: &[f64], dims: usize) -> (SquareMatrix, f64) {
    let n = y.len() / dims;
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &y[i * dims..(i + 1) * dims];
            let row: Vec<f64> = (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let yj = &y[j * dims..(j + 1) * dims];
                    let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                    1.0 / (1.0 + d2)
                })
                .collect();
            let sum = row.iter().sum();
            (row, sum)
        })
        .collect();
    let z: f64 = rows.iter().map(|(_, s)| s).sum();
    let data = rows.into_iter().flat_map(|(r, _)| r).collect();
    (SquareMatrix { n, data }, z)
}

/// Student-t (one degree of freedom) affinities `q_ij` of an embedding stored
/// row-major with `dims` coordinates per point.
pub fn student_t_affinities(y: &[f64], dims: usize) -> SquareMatrix {
    let (mut num, z) = student_t_kernel(y, dims);
    let n = num.n;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                num.data[i * n + j] = (num.data[i * n + j] / z).max(MIN_PROB);
            }
        }
    }
    num
}

/// `Σ p log(p / q)` with both sides clamped at [`MIN_PROB`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&p, &q)| {
            let (p, q) = (p.max(MIN_PROB), q.max(MIN_PROB));
            p * (p / q).ln()
        })
        .sum()
}

/// Gradient of KL(P‖Q) with respect to the embedding:
/// `4 Σ_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|²)`.
pub fn tsne_gradient(p: &SquareMatrix, q: &SquareMatrix, y: &[f64], dims: usize) -> Vec<f64> {
    let n = p.n;
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let yi = &y[i * dims..(i + 1) * dims];
            let mut g = vec![0.0; dims];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let yj = &y[j * dims..(j + 1) * dims];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                let w = 4.0 * (p.get(i, j) - q.get(i, j)) / (1.0 + d2);
                for k in 0..dims {
                    g[k] += w * (yi[k] - yj[k]);
                }
            }
            g
        })
        .collect()
}

/// Below this many points the optimizer runs on the calling thread; the
/// arithmetic is identical either way.
const PARALLEL_MIN_POINTS: usize = 256;

/// Buffers reused across optimizer iterations.
struct Workspace {
    n: usize,
    dims: usize,
    /// Symmetric kernel `1 / (1 + |y_i - y_j|²)`, zero diagonal.
    kernel: Vec<f64>,
    grad: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, dims: usize) -> Self {
        Workspace {
            n,
            dims,
            kernel: vec![0.0; n * n],
            grad: vec![0.0; n * dims],
        }
    }

    fn kernel_row(y: &[f64], dims: usize, i: usize, row: &mut [f64]) {
        let yi = &y[i * dims..(i + 1) * dims];
        for (j, out) in row.iter_mut().enumerate() {
            *out = if i == j {
                0.0
            } else {
                let yj = &y[j * dims..(j + 1) * dims];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                1.0 / (1.0 + d2)
            };
        }
    }

    /// Row `i` of `4 Σ_j (p_ij - q_ij) k_ij (y_i - y_j)`.
    fn gradient_row(p: &SquareMatrix, kernel: &[f64], z: f64, y: &[f64], dims: usize, i: usize, g: &mut [f64]) {
        let n = p.n;
        let yi = &y[i * dims..(i + 1) * dims];
        g.fill(0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = kernel[i * n + j];
            let q = (k / z).max(MIN_PROB);
            let w = 4.0 * (p.data[i * n + j] - q) * k;
            for (d, gd) in g.iter_mut().enumerate() {
                *gd += w * (yi[d] - y[j * dims + d]);
            }
        }
    }

    fn gradient(&mut self, p: &SquareMatrix, y: &[f64]) {
        let (n, dims) = (self.n, self.dims);
        if n >= PARALLEL_MIN_POINTS {
            self.kernel
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| Self::kernel_row(y, dims, i, row));
        } else {
            for (i, row) in self.kernel.chunks_mut(n).enumerate() {
                Self::kernel_row(y, dims, i, row);
            }
        }
        let z: f64 = self.kernel.chunks(n).map(|row| row.iter().sum::<f64>()).sum();
        let kernel = &self.kernel;
        if n >= PARALLEL_MIN_POINTS {
            self.grad
                .par_chunks_mut(dims)
                .enumerate()
                .for_each(|(i, g)| Self::gradient_row(p, kernel, z, y, dims, i, g));
        } else {
            for (i, g) in self.grad.chunks_mut(dims).enumerate() {
                Self::gradient_row(p, kernel, z, y, dims, i, g);
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn initial_position(seed: u64, key: u64, dims: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(key)));
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    (0..dims).map(|_| normal.sample(&mut rng)).collect()
}

fn center(y: &mut [f64], dims: usize) {
    let n = y.len() / dims;
    for k in 0..dims {
        let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
        for i in 0..n {
            y[i * dims + k] -= mean;
        }
    }
}

/// Projects `points` with t-SNE. Point `i` uses initialization key `i`.
pub fn tsne(points: &[Vec<f64>], config: &ProjectionConfig) -> Result<Projection, ProjectionError> {
    let keys: Vec<u64> = (0..points.len() as u64).collect();
    tsne_keyed(points, &keys, config)
}

/// Projects `points` with t-SNE; `keys[i]` selects point `i`'s random
/// initialization stream and its place in the internal summation order.
pub fn tsne_keyed(points: &[Vec<f64>], keys: &[u64], config: &ProjectionConfig) -> Result<Projection, ProjectionError> {
    config.validate()?;
    let n = points.len();
    if n < MIN_POINTS {
        return Err(ProjectionError::Domain(format!(
            "t-SNE needs at least {MIN_POINTS} points, got {n}"
        )));
    }
    if keys.len() != n {
        return Err(ProjectionError::Validation(format!(
            "{} keys for {n} points",
            keys.len()
        )));
    }
    let width = points[0].len();
    if width == 0 || points.iter().any(|p| p.len() != width) {
        return Err(ProjectionError::Validation(
            "points must share one non-zero dimension".into(),
        ));
    }
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(ProjectionError::Validation(format!(
            "point {i} has a non-finite coordinate"
        )));
    }

    let mut canonical: Vec<usize> = (0..n).collect();
    canonical.sort_by_key(|&i| (keys[i], i));
    let ordered: Vec<Vec<f64>> = canonical.iter().map(|&i| points[i].clone()).collect();

    let dims = config.out_dims;
    let p = joint_probabilities(&ordered, config.effective_perplexity(n));
    let mut y: Vec<f64> = canonical
        .iter()
        .flat_map(|&i| initial_position(config.seed, keys[i], dims))
        .collect();
    center(&mut y, dims);
    let kl_initial = kl_divergence(p.as_slice(), student_t_affinities(&y, dims).as_slice());

    let exaggerated = SquareMatrix {
        n,
        data: p.data.iter().map(|v| v * config.early_exaggeration).collect(),
    };
    let learning_rate = config.effective_learning_rate(n);
    let mut velocity = vec![0.0; n * dims];
    let mut gains = vec![1.0; n * dims];
    let mut work = Workspace::new(n, dims);
    for iter in 0..config.iterations {
        let early = iter < EXAGGERATION_ITERATIONS;
        let target = if early { &exaggerated } else { &p };
        let momentum = if early { INITIAL_MOMENTUM } else { FINAL_MOMENTUM };
        work.gradient(target, &y);
        for (((v, yv), g), gain) in velocity
            .iter_mut()
            .zip(y.iter_mut())
            .zip(&work.grad)
            .zip(gains.iter_mut())
        {
            *gain = if (*g > 0.0) != (*v > 0.0) {
                *gain + GAIN_INCREASE
            } else {
                (*gain * GAIN_DECAY).max(MIN_GAIN)
            };
            *v = momentum * *v - learning_rate * *gain * g;
            *yv += *v;
        }
        center(&mut y, dims);
    }
    let kl_final = kl_divergence(p.as_slice(), student_t_affinities(&y, dims).as_slice());

    let mut out = vec![Vec::new(); n];
    for (slot, &original) in canonical.iter().enumerate() {
        out[original] = y[slot * dims..(slot + 1) * dims].to_vec();
    }
    Ok(Projection {
        points: out,
        kl_initial,
        kl_final,
        config: config.clone(),
    })
}
