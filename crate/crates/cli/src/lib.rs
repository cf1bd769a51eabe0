//! Command-line front end for the `mk-plane` solver: configuration, density
//! grid files, reports and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod grid_io;
pub mod report;
