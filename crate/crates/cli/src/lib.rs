//! Pipeline for the heat-demand to energy-cost case study: configuration,
//! stage commands, artifact manifest and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
