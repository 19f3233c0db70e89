//! Memory-masking experiments on a toy environment with a planted controller.
//!
//! [`ToyEnv`] is a small arena where health decays every step and gathering
//! items (in a fixed kind order) restores it. [`PlantedController`] is a
//! recurrent policy whose hidden dimensions have known roles: per-kind seen
//! and gathered flags, a bearing memory, a heading compass, and decoys. A
//! [`MaskSpec`] zeroes chosen dimensions after every update, so removed
//! dimensions also stay removed in the recurrence.
//!
//! The generated traces double as fixtures with ground-truth memory semantics.

mod controller;
mod env;
mod frames;
mod harness;

use thiserror::Error;

pub use controller::{planted_roles, Axis, DimRole, PlantedController, BEARING_DECAY, TEMPERATURE, VECTOR_GAIN};
pub use env::{action_turn, Item, Observation, ToyConfig, ToyEnv, Transition, ACTION_EFFECTS, FORWARD_STEP, TURN_STEP};
pub use frames::{render_frame, write_frames, FRAME_HEIGHT, FRAME_WIDTH};
pub use harness::{
    compare_strategies, mask_from_strategy, reference_episodes, run_episode, run_unmasked, HarnessConfig, MaskSpec,
    RunSummary, Strategy, StrategyRow, StrategyTable,
};

use crate::reorder::ReorderError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum MaskLabError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Reorder(#[from] ReorderError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
