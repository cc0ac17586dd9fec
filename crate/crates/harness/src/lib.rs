//! Runs around the core library: scene generation, training, evaluation and
//! report comparison, driven by one TOML configuration per run.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod manifest;
pub mod report;
pub mod train;

pub use config::{Overrides, RunConfig};
pub use error::{HarnessError, Result};
