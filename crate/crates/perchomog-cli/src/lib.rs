//! Configuration, subcommands, manifests and plots for the `perchomog` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;
