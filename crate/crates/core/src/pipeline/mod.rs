//! End-to-end orchestration: synthetic fixtures, configuration, run log
//! and the stage functions behind the command-line tool.

mod city;
mod config;
pub mod runlog;
mod stages;

pub use city::{synthetic_city, SYNTHETIC_CLASSES};
pub use config::{ConfigError, PipelineConfig};
pub use runlog::RunRecord;
pub use stages::*;
