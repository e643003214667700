//! Config parsing, experiment dispatch and artifact emission.

pub mod artifacts;
pub mod config;
pub mod experiments;
pub mod runner;

pub use artifacts::{num, pgm, write_atomic, Artifacts, Manifest, Table};
pub use config::{parse_config, Experiment, RunConfig};
pub use runner::{execute, exit_code, output_dir, run, OUT_ENV};
