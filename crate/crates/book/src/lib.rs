//! The guide under `book/` compiled as documentation, so that
//! `cargo test --doc -p shardgraph-book` runs every Rust snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/hashgraph.md")]
pub mod hashgraph {}
#[doc = include_str!("../../../book/src/committees.md")]
pub mod committees {}
#[doc = include_str!("../../../book/src/reconfiguration.md")]
pub mod reconfiguration {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
