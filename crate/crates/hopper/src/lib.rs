//! Configuration, file formats, parallel execution and the command line for
//! the hopper policy-learning pipeline built on `hopper-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod parallel;

pub use config::{Config, ConfigError};
