//! Command line and plain-text artifacts for `tkp-core`.
//!
//! Every artifact starts with a format tag and version: datasets
//! (`tkp-dataset 1`), checkpoints (`tkp-checkpoint 1`), training logs
//! (`tkp-log 1`, JSON lines), metric and sweep reports (JSON) and feature
//! exports (`tkp-features 1`). Checkpoints embed their configuration and its
//! SHA-256 digest so evaluation can refuse a mismatched config.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
mod text;

pub use error::CliError;
