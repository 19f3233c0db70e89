//! Guide chapters compiled as doctests, so the snippets in `book/` stay in
//! step with the code.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/traces.md")]
pub mod traces {}

#[doc = include_str!("../../../book/src/memory-matrix.md")]
pub mod memory_matrix {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/reordering.md")]
pub mod reordering {}

#[doc = include_str!("../../../book/src/projection.md")]
pub mod projection {}

#[doc = include_str!("../../../book/src/queries.md")]
pub mod queries {}

#[doc = include_str!("../../../book/src/mask-lab.md")]
pub mod mask_lab {}

#[doc = include_str!("../../../book/src/server.md")]
pub mod server {}
