//! Library side of the `uplot` command: run configuration, the commands
//! themselves and SVG rendering.

pub mod commands;
pub mod config;
pub mod svg;

pub use config::RunConfig;
