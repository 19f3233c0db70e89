//! Hand-specified recurrent controller with known dimension semantics.
//!
//! Functional dimensions are spread evenly over the hidden vector; every other
//! dimension is a decoy carrying small noise that the policy never reads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{action_turn, Observation, ACTION_EFFECTS};
use super::MaskLabError;
use crate::metrics::wrap_degrees;
use crate::trace::ItemKind;

/// Magnitude of the heading and bearing vectors.
pub const VECTOR_GAIN: f64 = 0.9;

/// Per-step decay of the bearing memory while the target is out of view.
pub const BEARING_DECAY: f64 = 0.97;

/// Softmax temperature of the policy head.
pub const TEMPERATURE: f64 = 0.1;

/// Memory values below this magnitude are read as "no information".
const READ_THRESHOLD: f64 = 0.2;

/// Flags above this value are read as set.
const FLAG_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Meaning of one hidden dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "role", content = "of", rename_all = "snake_case")]
pub enum DimRole {
    /// +1 once an item of the kind has been in view during the episode.
    ItemSeen(ItemKind),
    /// +1 once the kind has been gathered in the current round.
    ItemGathered(ItemKind),
    /// Remembered world-frame direction to the current target.
    BearingEncoder(Axis),
    /// Path-integrated heading used for steering.
    Steering(Axis),
    Decoy,
}

impl DimRole {
    pub fn is_decoy(&self) -> bool {
        matches!(self, DimRole::Decoy)
    }

    pub fn is_flag(&self) -> bool {
        matches!(self, DimRole::ItemSeen(_) | DimRole::ItemGathered(_))
    }
}

/// Roles of `dims` hidden dimensions for the given item kinds.
///
/// With `F = 2k + 4` functional roles, role `j` sits at `floor((2j+1)·dims/(2F))`.
/// Role order: the seen/gathered flag pairs of the first half of the kinds,
/// bearing x, steering x, the remaining flag pairs, bearing y, steering y.
pub fn planted_roles(kinds: &[ItemKind], dims: usize) -> Result<Vec<DimRole>, MaskLabError> {
    let split = kinds.len().div_ceil(2);
    let mut functional = Vec::with_capacity(2 * kinds.len() + 4);
    for (half, axis) in [(&kinds[..split], Axis::X), (&kinds[split..], Axis::Y)] {
        for kind in half {
            functional.push(DimRole::ItemSeen(kind.clone()));
            functional.push(DimRole::ItemGathered(kind.clone()));
        }
        functional.push(DimRole::BearingEncoder(axis));
        functional.push(DimRole::Steering(axis));
    }
    let f = functional.len();
    if dims < f {
        return Err(MaskLabError::Validation(format!(
            "{dims} hidden dimensions cannot hold {f} functional roles"
        )));
    }
    let mut roles = vec![DimRole::Decoy; dims];
    for (j, role) in functional.into_iter().enumerate() {
        roles[(2 * j + 1) * dims / (2 * f)] = role;
    }
    Ok(roles)
}

#[derive(Debug, Clone)]
struct Layout {
    seen: Vec<usize>,
    gathered: Vec<usize>,
    bearing: [usize; 2],
    heading: [usize; 2],
    decoys: Vec<usize>,
}

impl Layout {
    fn new(roles: &[DimRole], kinds: &[ItemKind]) -> Self {
        let find = |want: &DimRole| roles.iter().position(|r| r == want).expect("role is planted");
        Layout {
            seen: kinds.iter().map(|k| find(&DimRole::ItemSeen(k.clone()))).collect(),
            gathered: kinds.iter().map(|k| find(&DimRole::ItemGathered(k.clone()))).collect(),
            bearing: [
                find(&DimRole::BearingEncoder(Axis::X)),
                find(&DimRole::BearingEncoder(Axis::Y)),
            ],
            heading: [find(&DimRole::Steering(Axis::X)), find(&DimRole::Steering(Axis::Y))],
            decoys: (0..roles.len()).filter(|&i| roles[i].is_decoy()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedController {
    kinds: Vec<ItemKind>,
    roles: Vec<DimRole>,
    layout: Layout,
    hidden: Vec<f64>,
    decoy_noise_amp: f64,
    noise: ChaCha8Rng,
}

fn polar(angle_deg: f64) -> [f64; 2] {
    let r = angle_deg.to_radians();
    [VECTOR_GAIN * r.cos(), VECTOR_GAIN * r.sin()]
}

fn angle_of(v: [f64; 2]) -> f64 {
    v[1].atan2(v[0]).to_degrees()
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

impl PlantedController {
    pub fn new(kinds: &[ItemKind], dims: usize, decoy_noise_amp: f64, seed: u64) -> Result<Self, MaskLabError> {
        if !(0.0..=1.0).contains(&decoy_noise_amp) {
            return Err(MaskLabError::Validation(
                "decoy noise amplitude must be in [0, 1]".into(),
            ));
        }
        let roles = planted_roles(kinds, dims)?;
        Ok(PlantedController {
            kinds: kinds.to_vec(),
            layout: Layout::new(&roles, kinds),
            roles,
            hidden: vec![0.0; dims],
            decoy_noise_amp,
            noise: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn roles(&self) -> &[DimRole] {
        &self.roles
    }

    /// The current (masked) hidden state.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    /// Updates the hidden state from `obs`, multiplies it by `mask` and
    /// returns the action distribution computed from the masked state.
    pub fn step(&mut self, obs: &Observation, mask: &[bool]) -> Result<Vec<f64>, MaskLabError> {
        if mask.len() != self.hidden.len() {
            return Err(MaskLabError::Validation(format!(
                "mask has length {}, the controller has {} dimensions",
                mask.len(),
                self.hidden.len()
            )));
        }
        self.advance(obs, Some(mask));
        Ok(self.policy())
    }

    /// [`step`](Self::step) without any masking.
    pub fn step_unmasked(&mut self, obs: &Observation) -> Vec<f64> {
        self.advance(obs, None);
        self.policy()
    }

    fn advance(&mut self, obs: &Observation, mask: Option<&[bool]>) {
        let prev = &self.hidden;
        let l = &self.layout;
        let get = |i: usize| prev[i];
        let mut next = vec![0.0; prev.len()];

        let heading = match obs.last_action {
            None => polar(obs.heading),
            Some(action) => {
                let h = [get(l.heading[0]), get(l.heading[1])];
                if norm(h) == 0.0 {
                    [0.0, 0.0]
                } else {
                    polar(angle_of(h) + action_turn(action))
                }
            }
        };

        let round_done = l.gathered.iter().all(|&i| get(i) > FLAG_THRESHOLD);
        for (k, kind) in self.kinds.iter().enumerate() {
            let seen = get(l.seen[k]) > FLAG_THRESHOLD || obs.visible.iter().any(|s| &s.kind == kind);
            next[l.seen[k]] = if seen { 1.0 } else { -1.0 };
            let gathered = !round_done && (get(l.gathered[k]) > FLAG_THRESHOLD || obs.gathered.as_ref() == Some(kind));
            next[l.gathered[k]] = if gathered { 1.0 } else { -1.0 };
        }

        let target = l.gathered.iter().position(|&i| get(i) < FLAG_THRESHOLD);
        let bearing = match target {
            _ if round_done || obs.gathered.is_some() => [0.0, 0.0],
            None => [0.0, 0.0],
            Some(k) => match obs.visible.iter().find(|s| s.kind == self.kinds[k]) {
                Some(sighting) if norm(heading) > 0.0 => polar(angle_of(heading) - sighting.bearing),
                _ => [get(l.bearing[0]) * BEARING_DECAY, get(l.bearing[1]) * BEARING_DECAY],
            },
        };

        next[l.heading[0]] = heading[0];
        next[l.heading[1]] = heading[1];
        next[l.bearing[0]] = bearing[0];
        next[l.bearing[1]] = bearing[1];
        for &d in &l.decoys {
            next[d] = self.noise.random_range(-self.decoy_noise_amp..=self.decoy_noise_amp);
        }
        if let Some(mask) = mask {
            for (v, &keep) in next.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        self.hidden = next;
    }

    /// Action distribution read from the non-decoy dimensions only.
    pub fn policy(&self) -> Vec<f64> {
        let h = &self.hidden;
        let l = &self.layout;
        let target = l.gathered.iter().position(|&i| h[i] < FLAG_THRESHOLD);
        let bearing = [h[l.bearing[0]], h[l.bearing[1]]];
        let heading = [h[l.heading[0]], h[l.heading[1]]];
        let pursue = target.is_some_and(|k| h[l.seen[k]] > FLAG_THRESHOLD)
            && norm(bearing) > READ_THRESHOLD
            && norm(heading) > READ_THRESHOLD;

        let scores: Vec<f64> = if pursue {
            // Positive: target to the left.
            let phi = wrap_degrees(angle_of(bearing) - angle_of(heading));
            let wanted = phi.clamp(-15.0, 15.0);
            ACTION_EFFECTS
                .iter()
                .map(|&(turn, forward)| {
                    let misalignment = if forward {
                        (phi.abs() - 45.0).max(0.0) / 45.0
                    } else {
                        (45.0 - phi.abs()).max(0.0) / 45.0
                    };
                    -(wanted - turn).abs() / 15.0 - misalignment
                })
                .collect()
        } else {
            // Search by spinning left in place.
            ACTION_EFFECTS
                .iter()
                .map(|&(turn, forward)| match (turn > 0.0, forward) {
                    (true, false) => 1.0,
                    (true, true) => 0.3,
                    _ => 0.0,
                })
                .collect()
        };
        softmax(&scores, TEMPERATURE)
    }
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
