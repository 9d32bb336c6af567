//! Command-line front end for the pipeline schedule simulator.

pub mod commands;
pub mod gantt;
pub mod manifest;
