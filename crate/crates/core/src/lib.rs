//! Analytics engine for the hidden-state memory of recurrent navigation agents.
//!
//! An agent's memory over one episode is a matrix of hidden-state vectors, one
//! column per time step. This crate ingests recorded episode traces and offers
//! the analyses needed to make sense of that matrix:
//!
//! * [`trace`]: the episode data model, its JSON format and the memory matrix.
//! * [`metrics`]: per-step derived metrics (decision ambiguity, orientation
//!   variation, items in the field of view, ...).
//! * [`reorder`]: scoring and re-ordering of memory dimensions.
//! * [`projection`]: exact t-SNE, used for the 2D state map and the 1D row
//!   ordering.
//! * [`query`]: boolean filters over time steps.
//! * [`masklab`]: a toy navigation environment with a hand-planted recurrent
//!   controller, used to run memory-masking experiments and to generate
//!   fixtures whose memory semantics are known.
//!
//! ```
//! use memscope::masklab::{run_episode, HarnessConfig, MaskSpec};
//! use memscope::reorder::{reorder, Criterion};
//! use memscope::trace::memory_matrix;
//!
//! let config = HarnessConfig::default();
//! let mask = MaskSpec::full(config.memory_dims);
//! let (episode, summary) = run_episode(7, &mask, &config).unwrap();
//! assert_eq!(episode.steps.len(), summary.steps_survived);
//!
//! let matrix = memory_matrix(&episode);
//! let ranked = reorder(&matrix, Criterion::Activation, None).unwrap();
//! assert_eq!(ranked.order.len(), 32);
//! ```

pub mod canonical;
pub mod masklab;
pub mod metrics;
pub mod projection;
pub mod query;
pub mod reorder;
pub mod trace;
