//! Compiles every code block of the mdbook guide as a documentation test,
//! so `cargo test --workspace` fails whenever the book drifts from the
//! library. Each chapter becomes one empty module carrying the chapter's
//! markdown as its doc comment.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/jets.md")]
pub mod jets {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/spray.md")]
pub mod spray {}

#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}

#[doc = include_str!("../../../book/src/holonomy.md")]
pub mod holonomy {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
