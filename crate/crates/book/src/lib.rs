//! Compiles the guide in `book/src` so that `cargo test` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/graph.md")]
pub mod graph {}
#[doc = include_str!("../../../book/src/scm.md")]
pub mod scm {}
#[doc = include_str!("../../../book/src/feasibility.md")]
pub mod feasibility {}
#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
