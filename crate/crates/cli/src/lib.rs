//! Experiment runner: builds indexes, retrieves, generates answers under a
//! pipeline variant, synthesizes QA pairs and evaluates runs, all from one
//! TOML run configuration.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_augment, cmd_evaluate, cmd_generate, cmd_index, cmd_report, cmd_retrieve, CommandError, ReportFile,
};
pub use config::{Overrides, RunConfig};
