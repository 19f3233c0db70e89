//! HTTP service and command-line front end for the memscope engine.
//!
//! [`build_router`] exposes the engine over JSON:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/episodes` | |
//! | GET | `/api/episodes/{id}` | |
//! | GET | `/api/episodes/{id}/metrics` | |
//! | POST | `/api/episodes/{id}/reorder` | `{criterion, interval?}` |
//! | POST | `/api/episodes/{id}/projection` | projection config overrides |
//! | POST | `/api/episodes/{id}/query` | query expression |
//! | POST | `/api/masklab/run` | `{strategy, episodes, seed}` |
//! | GET | `/frames/{id}/{file}` | |

pub mod api;
pub mod catalog;
pub mod commands;

pub use api::{build_router, ApiError, AppState};
pub use catalog::{DataCatalog, EpisodeSummary};
