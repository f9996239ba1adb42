//! File formats, configuration, reports and the command-line pipeline for
//! `shrewd-core`.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod formats;
