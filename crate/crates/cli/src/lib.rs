//! Command-line companion to `resynth-core`: configuration files, binary
//! artifact formats, the run manifest, and the pipeline commands
//! (generate data, train, detect, evaluate, diagnose).

pub mod bytes;
pub mod config;
pub mod dataset_io;
pub mod diagnose;
pub mod driver;
pub mod error;
pub mod imgdump;
pub mod manifest;
pub mod model_io;
pub mod report;

pub use error::{CliError, Result};
