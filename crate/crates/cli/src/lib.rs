//! Library side of the `fgdqn` command-line tool: configuration files,
//! experiment runs, output files and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod run;
