//! Experiment runners and command-line plumbing for CSI-guided occlusion
//! removal.

pub mod commands;
pub mod config;
pub mod defaults;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod pipeline;
pub mod plots;
pub mod results;

pub use error::{exit, CliError, Result};
