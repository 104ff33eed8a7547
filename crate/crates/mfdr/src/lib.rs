//! Command-line front end and file formats for `mfdr-core`: configuration,
//! CSV input and output, SVG charts, and the `design`, `analyze-lti`,
//! `simulate`, `track`, `capacity` and `verify` commands.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod svg;

pub use config::RunConfig;
pub use error::CliError;
