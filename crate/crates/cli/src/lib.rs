//! Command-line front end: argument definitions, subcommands, run manifests
//! and report rendering.

pub mod args;
pub mod commands;
pub mod failure;
pub mod kv;
pub mod manifest;
pub mod report;
