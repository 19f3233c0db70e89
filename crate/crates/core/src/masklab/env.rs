//! A small partially observable arena: gather items in a fixed kind order to
//! restore health before it decays to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MaskLabError;
use crate::metrics::{self, normalize_orientation};
use crate::trace::{ItemKind, ItemSighting, MapBounds, Outcome, Point, DEFAULT_TIMEOUT, FOV_HALF_WIDTH};

/// Degrees turned by one turning action, counter-clockwise positive.
pub const TURN_STEP: f64 = 15.0;

/// World units moved by one forward action.
pub const FORWARD_STEP: f64 = 1.0;

/// First-round items sit at least this far off the initial heading, degrees.
const FIRST_ROUND_MIN_BEARING: f64 = FOV_HALF_WIDTH + 5.0;

/// Heading change and forward motion of each action index.
pub const ACTION_EFFECTS: [(f64, bool); 5] = [
    (0.0, true),
    (-TURN_STEP, true),
    (-TURN_STEP, false),
    (TURN_STEP, false),
    (TURN_STEP, true),
];

/// Turn, in degrees, of an action index. Unknown indices do not turn.
pub fn action_turn(action: usize) -> f64 {
    ACTION_EFFECTS.get(action).map_or(0.0, |e| e.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub bounds: MapBounds,
    /// Kinds placed each round, in the order they must be gathered.
    pub kinds: Vec<ItemKind>,
    pub pickup_radius: f64,
    pub health_decay: f64,
    pub hp_restore: f64,
    pub timeout: usize,
    /// Rounds to complete for a success. `None` respawns items forever.
    pub rounds: Option<u32>,
    /// Minimum distance between a freshly placed item and the agent.
    pub min_agent_distance: f64,
    /// Minimum distance between items of the same round.
    pub min_item_spacing: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            bounds: MapBounds::new(0.0, 0.0, 20.0, 20.0),
            kinds: vec![
                ItemKind::GreenArmor,
                ItemKind::RedArmor,
                ItemKind::HealthPack,
                ItemKind::SoulSphere,
            ],
            pickup_radius: 1.5,
            health_decay: 1.0,
            hp_restore: 25.0,
            timeout: DEFAULT_TIMEOUT,
            rounds: None,
            min_agent_distance: 5.0,
            min_item_spacing: 4.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), MaskLabError> {
        let b = &self.bounds;
        if !(b.xmin < b.xmax && b.ymin < b.ymax) {
            return Err(MaskLabError::Validation("empty arena bounds".into()));
        }
        if self.kinds.is_empty() {
            return Err(MaskLabError::Validation("at least one item kind is needed".into()));
        }
        // Written so that NaN fails every check.
        let positive = |v: f64| v > 0.0;
        let non_negative = |v: f64| v >= 0.0;
        if self.timeout == 0
            || !positive(self.pickup_radius)
            || !non_negative(self.health_decay)
            || !non_negative(self.hp_restore)
        {
            return Err(MaskLabError::Validation(
                "timeout, radius, decay and restore must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub kind: ItemKind,
    pub pos: Point,
    pub present: bool,
}

/// What the controller receives at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Present items inside the field of view, with left-negative bearings.
    pub visible: Vec<ItemSighting>,
    /// Agent heading, degrees in `[0, 360)`.
    pub heading: f64,
    /// Kind gathered by the previous action.
    pub gathered: Option<ItemKind>,
    /// Previous action index.
    pub last_action: Option<usize>,
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub gathered: Option<ItemKind>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    config: ToyConfig,
    rng: ChaCha8Rng,
    pub items: Vec<Item>,
    pub pos: Point,
    /// Degrees in `[0, 360)`, counter-clockwise from +x.
    pub orientation: f64,
    pub health: f64,
    pub t: usize,
    pub round: u32,
    pub gathered_per_kind: Vec<u32>,
    last_gathered: Option<ItemKind>,
    last_action: Option<usize>,
    outcome: Option<Outcome>,
}

impl ToyEnv {
    pub fn new(seed: u64, config: ToyConfig) -> Result<Self, MaskLabError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = config.bounds;
        let margin = 1.0f64.min(b.width() / 4.0).min(b.height() / 4.0);
        let pos = [
            rng.random_range(b.xmin + margin..=b.xmax - margin),
            rng.random_range(b.ymin + margin..=b.ymax - margin),
        ];
        let orientation = normalize_orientation(rng.random_range(0.0..360.0f64).floor());
        let kinds = config.kinds.len();
        let mut env = ToyEnv {
            config,
            rng,
            items: Vec::new(),
            pos,
            orientation,
            health: 100.0,
            t: 0,
            round: 1,
            gathered_per_kind: vec![0; kinds],
            last_gathered: None,
            last_action: None,
            outcome: None,
        };
        env.place_round(true);
        Ok(env)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    /// Index of the kind that can be gathered next.
    pub fn next_kind(&self) -> Option<usize> {
        self.items.iter().position(|i| i.present)
    }

    pub fn items_gathered(&self) -> u32 {
        self.gathered_per_kind.iter().sum()
    }

    /// Places one item per kind. In the first round items start outside the
    /// initial field of view, so that the first sighting is a real event.
    fn place_round(&mut self, first: bool) {
        let b = self.config.bounds;
        let margin = 1.0f64.min(b.width() / 4.0).min(b.height() / 4.0);
        let mut placed: Vec<Point> = Vec::new();
        let mut items = Vec::with_capacity(self.config.kinds.len());
        for kind in self.config.kinds.clone() {
            let mut best: Option<(f64, Point)> = None;
            for _ in 0..256 {
                let p = [
                    self.rng.random_range(b.xmin + margin..=b.xmax - margin),
                    self.rng.random_range(b.ymin + margin..=b.ymax - margin),
                ];
                let agent_gap = dist(p, self.pos) - self.config.min_agent_distance;
                let item_gap = placed
                    .iter()
                    .map(|q| dist(p, *q) - self.config.min_item_spacing)
                    .fold(f64::INFINITY, f64::min);
                let out_of_view = !first
                    || metrics::orientation_to_item(self.pos, self.orientation, p)
                        .is_ok_and(|a| a.abs() > FIRST_ROUND_MIN_BEARING);
                let slack = agent_gap.min(item_gap);
                if slack >= 0.0 && out_of_view {
                    best = Some((slack, p));
                    break;
                }
                // Keep the least bad candidate in case the arena is crowded.
                if out_of_view && best.is_none_or(|(s, _)| slack > s) {
                    best = Some((slack, p));
                }
            }
            let pos = best.map_or([(b.xmin + b.xmax) / 2.0, (b.ymin + b.ymax) / 2.0], |(_, p)| p);
            placed.push(pos);
            items.push(Item {
                kind,
                pos,
                present: true,
            });
        }
        self.items = items;
    }

    pub fn observe(&self) -> Observation {
        let visible = self
            .items
            .iter()
            .filter(|i| i.present && metrics::item_in_fov(self.pos, self.orientation, i.pos))
            .map(|i| ItemSighting {
                kind: i.kind.clone(),
                pos: i.pos,
                bearing: metrics::orientation_to_item(self.pos, self.orientation, i.pos)
                    .expect("visible items do not coincide with the agent"),
            })
            .collect();
        Observation {
            visible,
            heading: self.orientation,
            gathered: self.last_gathered.clone(),
            last_action: self.last_action,
        }
    }

    /// Turns, then moves forward (clamped to the arena), decays health and
    /// gathers the next item in order if it is within reach.
    pub fn step(&mut self, action: usize) -> Result<Transition, MaskLabError> {
        if self.is_done() {
            return Err(MaskLabError::State("the episode has ended".into()));
        }
        let (turn, forward) = *ACTION_EFFECTS
            .get(action)
            .ok_or_else(|| MaskLabError::Validation(format!("unknown action {action}")))?;
        self.orientation = normalize_orientation(self.orientation + turn);
        if forward {
            let rad = self.orientation.to_radians();
            let moved = [
                self.pos[0] + FORWARD_STEP * rad.cos(),
                self.pos[1] + FORWARD_STEP * rad.sin(),
            ];
            self.pos = self.config.bounds.clamp(moved);
        }
        self.health = (self.health - self.config.health_decay).clamp(0.0, 100.0);
        self.t += 1;
        self.last_action = Some(action);

        let mut reward = 0.0;
        let mut gathered = None;
        if let Some(k) = self.next_kind() {
            if dist(self.items[k].pos, self.pos) <= self.config.pickup_radius {
                self.items[k].present = false;
                self.gathered_per_kind[k] += 1;
                self.health = (self.health + self.config.hp_restore).clamp(0.0, 100.0);
                reward = 1.0;
                gathered = Some(self.items[k].kind.clone());
                if self.next_kind().is_none() {
                    if self.config.rounds.is_some_and(|r| self.round >= r) {
                        self.outcome = Some(Outcome::Success);
                    } else {
                        self.round += 1;
                        self.place_round(false);
                    }
                }
            }
        }
        self.last_gathered = gathered.clone();

        if self.outcome.is_none() {
            if self.health <= 0.0 {
                self.outcome = Some(Outcome::Failure);
            } else if self.t >= self.config.timeout {
                self.outcome = Some(Outcome::Timeout);
            }
        }
        Ok(Transition {
            reward,
            gathered,
            done: self.is_done(),
        })
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
