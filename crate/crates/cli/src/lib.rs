//! Experiment front end: configuration documents, run manifests and the
//! `build-victim`, `attack` and `analyze` subcommands.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{cmd_analyze, cmd_attack, cmd_build_victim, CommandError, RunOutput};
pub use config::{ConfigError, ExperimentConfig};
pub use manifest::RunManifest;
