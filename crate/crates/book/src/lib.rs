//! Code listings of the guide in `book/src`, compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/design.md")]
pub mod design {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/phonons.md")]
pub mod phonons {}
#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}
#[doc = include_str!("../../../book/src/drift.md")]
pub mod drift {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
