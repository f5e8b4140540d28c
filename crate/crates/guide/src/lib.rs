//! The tdxviz guide lives in `book/` as an mdbook. Each chapter is included
//! here as module docs so `cargo test` runs every snippet as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/explanations.md")]
pub mod explanations {}
#[doc = include_str!("../../../book/src/contours.md")]
pub mod contours {}
#[doc = include_str!("../../../book/src/sweeps.md")]
pub mod sweeps {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
