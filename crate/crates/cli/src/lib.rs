//! Library surface of the experiment driver: config parsing and the
//! batch runner. The `cfsim` binary is a thin wrapper over these.

pub mod config;
pub mod experiment;
