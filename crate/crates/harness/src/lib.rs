//! Experiment harness: configuration, runs, metrics and outputs.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod output;
pub mod report;
