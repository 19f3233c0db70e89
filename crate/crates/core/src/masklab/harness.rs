//! Episode rollouts, mask construction and strategy comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::controller::PlantedController;
use super::env::{ToyConfig, ToyEnv};
use super::MaskLabError;
use crate::reorder::{rank, reorder, Criterion};
use crate::trace::{argmax, memory_matrix, EpisodeTrace, Outcome, Step, DEFAULT_ACTION_LABELS};

/// Environment name recorded in generated traces.
pub const ENV_NAME: &str = "toy-gather";

/// Mixed into the episode seed to seed the decoy noise.
const NOISE_SEED_SALT: u64 = 0x6a09_e667_f3bc_c909;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub memory_dims: usize,
    pub decoy_noise_amp: f64,
    pub env: ToyConfig,
    /// Unmasked episodes whose scores are pooled by criterion-based masks.
    pub reference_count: usize,
    pub reference_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            memory_dims: 32,
            decoy_noise_amp: 0.05,
            env: ToyConfig::default(),
            reference_count: 10,
            reference_seed: 1_000_000,
        }
    }
}

/// Which hidden dimensions survive; `false` entries are zeroed every step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub bits: Vec<bool>,
    pub strategy: String,
}

impl MaskSpec {
    pub fn full(dims: usize) -> Self {
        MaskSpec {
            bits: vec![true; dims],
            strategy: Strategy::Full.to_string(),
        }
    }

    /// Keeps every dimension except `removed`.
    pub fn without(dims: usize, removed: &[usize]) -> Self {
        let mut bits = vec![true; dims];
        for &i in removed {
            if i < dims {
                bits[i] = false;
            }
        }
        MaskSpec {
            bits,
            strategy: format!("without-{removed:?}"),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Number of recorded steps, at most the timeout.
    pub steps_survived: usize,
    pub items_gathered: u32,
    pub per_kind: BTreeMap<String, u32>,
    pub outcome: Outcome,
    pub final_health: f64,
}

/// Rolls out one greedy episode with `mask` applied after every update.
pub fn run_episode(
    seed: u64,
    mask: &MaskSpec,
    config: &HarnessConfig,
) -> Result<(EpisodeTrace, RunSummary), MaskLabError> {
    if mask.len() != config.memory_dims {
        return Err(MaskLabError::Validation(format!(
            "mask has length {}, expected {}",
            mask.len(),
            config.memory_dims
        )));
    }
    rollout(seed, Some(&mask.bits), config)
}

/// Rolls out one episode with masking disabled.
pub fn run_unmasked(seed: u64, config: &HarnessConfig) -> Result<(EpisodeTrace, RunSummary), MaskLabError> {
    rollout(seed, None, config)
}

fn rollout(
    seed: u64,
    mask: Option<&[bool]>,
    config: &HarnessConfig,
) -> Result<(EpisodeTrace, RunSummary), MaskLabError> {
    let mut env = ToyEnv::new(seed, config.env.clone())?;
    let mut controller = PlantedController::new(
        &config.env.kinds,
        config.memory_dims,
        config.decoy_noise_amp,
        seed ^ NOISE_SEED_SALT,
    )?;
    let mut steps = Vec::new();
    while !env.is_done() {
        let obs = env.observe();
        let probs = match mask {
            Some(bits) => controller.step(&obs, bits)?,
            None => controller.step_unmasked(&obs),
        };
        let action = argmax(&probs);
        let (t, pos, orientation, health) = (env.t, env.pos, env.orientation, env.health);
        let transition = env.step(action)?;
        steps.push(Step {
            t,
            pos,
            orientation,
            health,
            reward: transition.reward,
            action_probs: probs,
            action,
            hidden: controller.hidden().to_vec(),
            items_in_fov: obs.visible,
            event: transition.gathered.map(|k| format!("gathered:{k}")),
            frame_ref: None,
            saliency_ref: None,
        });
    }
    let outcome = env.outcome().expect("loop ends with an outcome");
    let per_kind = config
        .env
        .kinds
        .iter()
        .zip(&env.gathered_per_kind)
        .map(|(k, &n)| (k.to_string(), n))
        .collect();
    let summary = RunSummary {
        steps_survived: steps.len(),
        items_gathered: env.items_gathered(),
        per_kind,
        outcome,
        final_health: env.health,
    };
    let trace = EpisodeTrace {
        id: format!("toy-{seed:05}"),
        env_name: ENV_NAME.into(),
        seed,
        outcome,
        action_labels: DEFAULT_ACTION_LABELS.iter().map(|s| s.to_string()).collect(),
        memory_dims: config.memory_dims,
        map_bounds: config.env.bounds,
        steps,
    };
    Ok((trace, summary))
}

/// How to pick the hidden dimensions that survive masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Full,
    /// Keep the best-scoring half under a criterion, pooled over references.
    TopHalf(Criterion),
    /// Keep the complement of [`Strategy::TopHalf`].
    BottomHalf(Criterion),
    /// Keep a seeded uniform half.
    RandomHalf(u64),
}

impl Strategy {
    pub fn needs_references(self) -> bool {
        matches!(self, Strategy::TopHalf(_) | Strategy::BottomHalf(_))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Full => f.write_str("full"),
            Strategy::TopHalf(c) => write!(f, "top-half-{c}"),
            Strategy::BottomHalf(c) => write!(f, "bottom-half-{c}"),
            Strategy::RandomHalf(seed) => write!(f, "random-half-{seed}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = MaskLabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let criterion = |name: &str| -> Result<Criterion, MaskLabError> {
            let c: Criterion = name
                .parse()
                .map_err(|_| MaskLabError::Validation(format!("unknown criterion `{name}`")))?;
            match c {
                Criterion::Activation | Criterion::Change | Criterion::Stable => Ok(c),
                _ => Err(MaskLabError::Validation(format!(
                    "criterion `{name}` cannot select a half; use activation, change or stable"
                ))),
            }
        };
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        if s == "full" {
            Ok(Strategy::Full)
        } else if s == "random-half" {
            Ok(Strategy::RandomHalf(0))
        } else if let Some(seed) = s.strip_prefix("random-half-") {
            seed.parse()
                .map(Strategy::RandomHalf)
                .map_err(|_| MaskLabError::Validation(format!("bad random-half seed `{seed}`")))
        } else if let Some(name) = s.strip_prefix("top-half-") {
            criterion(name).map(Strategy::TopHalf)
        } else if let Some(name) = s.strip_prefix("bottom-half-") {
            criterion(name).map(Strategy::BottomHalf)
        } else {
            Err(MaskLabError::Validation(format!("unknown strategy `{s}`")))
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unmasked episodes used to score dimensions for criterion-based masks.
pub fn reference_episodes(config: &HarnessConfig) -> Result<Vec<EpisodeTrace>, MaskLabError> {
    (0..config.reference_count as u64)
        .into_par_iter()
        .map(|i| run_unmasked(config.reference_seed + i, config).map(|(trace, _)| trace))
        .collect()
}

/// Builds the mask of `strategy` over `dims` dimensions. Half strategies keep
/// `ceil(dims / 2)` dimensions.
pub fn mask_from_strategy(
    strategy: Strategy,
    references: &[EpisodeTrace],
    dims: usize,
) -> Result<MaskSpec, MaskLabError> {
    let keep = dims.div_ceil(2);
    let bits = match strategy {
        Strategy::Full => vec![true; dims],
        Strategy::TopHalf(criterion) | Strategy::BottomHalf(criterion) => {
            if references.is_empty() {
                return Err(MaskLabError::Validation(
                    "criterion-based masks need reference episodes".into(),
                ));
            }
            let mut pooled = vec![0.0; dims];
            for episode in references {
                if episode.memory_dims != dims {
                    return Err(MaskLabError::Validation(format!(
                        "reference `{}` has {} dimensions, expected {dims}",
                        episode.id, episode.memory_dims
                    )));
                }
                let scored = reorder(&memory_matrix(episode), criterion, None)?;
                pooled.iter_mut().zip(&scored.scores).for_each(|(p, s)| *p += s);
            }
            let order = rank(&pooled, criterion.descending());
            let top = matches!(strategy, Strategy::TopHalf(_));
            let mut bits = vec![!top; dims];
            for &i in &order[..keep] {
                bits[i] = top;
            }
            bits
        }
        Strategy::RandomHalf(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bits = vec![false; dims];
            for i in rand::seq::index::sample(&mut rng, dims, keep) {
                bits[i] = true;
            }
            bits
        }
    };
    Ok(MaskSpec {
        bits,
        strategy: strategy.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub kept_dims: usize,
    pub mean_steps_survived: f64,
    pub mean_items_gathered: f64,
    pub mean_gathered_per_kind: BTreeMap<String, f64>,
    pub mean_final_health: f64,
    pub outcomes: BTreeMap<String, usize>,
    /// `(mean - full) / full` for steps survived, when a full row is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_steps_vs_full: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub episodes: usize,
    pub base_seed: u64,
    pub rows: Vec<StrategyRow>,
}

impl StrategyTable {
    pub fn row(&self, strategy: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

fn summarize(strategy: String, kept_dims: usize, runs: &[RunSummary]) -> StrategyRow {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mut per_kind: BTreeMap<String, f64> = BTreeMap::new();
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    for run in runs {
        for (kind, count) in &run.per_kind {
            *per_kind.entry(kind.clone()).or_default() += *count as f64 / n;
        }
        *outcomes.entry(run.outcome.as_str().to_owned()).or_default() += 1;
    }
    StrategyRow {
        strategy,
        kept_dims,
        mean_steps_survived: mean(&|r| r.steps_survived as f64),
        mean_items_gathered: mean(&|r| r.items_gathered as f64),
        mean_gathered_per_kind: per_kind,
        mean_final_health: mean(&|r| r.final_health),
        outcomes,
        relative_steps_vs_full: None,
    }
}

/// Runs every strategy on episodes seeded `base_seed..base_seed + n`.
pub fn compare_strategies(
    strategies: &[Strategy],
    n: usize,
    base_seed: u64,
    config: &HarnessConfig,
) -> Result<StrategyTable, MaskLabError> {
    if n == 0 {
        return Err(MaskLabError::Validation("at least one episode is needed".into()));
    }
    let references = if strategies.iter().any(|s| s.needs_references()) {
        reference_episodes(config)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mask = mask_from_strategy(strategy, &references, config.memory_dims)?;
        let runs = (0..n as u64)
            .into_par_iter()
            .map(|i| run_episode(base_seed + i, &mask, config).map(|(_, summary)| summary))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(summarize(strategy.to_string(), mask.kept(), &runs));
    }
    if let Some(full) = rows
        .iter()
        .find(|r| r.strategy == "full")
        .map(|r| r.mean_steps_survived)
    {
        for row in &mut rows {
            row.relative_steps_vs_full = Some((row.mean_steps_survived - full) / full);
        }
    }
    Ok(StrategyTable {
        episodes: n,
        base_seed,
        rows,
    })
}
