//! File formats, reports, parallel drivers and the command line for
//! `entangle-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod parallel;
pub mod report;
