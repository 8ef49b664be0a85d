//! Files, configuration and experiment plumbing around `petal-core`.

pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod report;
