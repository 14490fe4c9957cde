//! Library surface of the pipeline binary: configuration loading and the
//! command implementations, shared with the integration test suites.

pub mod commands;
pub mod config;
