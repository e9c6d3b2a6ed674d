//! Configuration, experiment orchestration and file exports around the
//! transport solver. The `otmap` binary is a thin wrapper over this crate.

pub mod config;
pub mod experiment;
