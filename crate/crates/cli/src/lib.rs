//! Library surface of the CLI: configuration, presets, subcommand
//! implementations, and output manifests. The `igp` binary is a thin
//! argument-parsing layer over these.

pub mod commands;
pub mod config;
pub mod manifest;
