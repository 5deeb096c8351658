//! Synthetic benchmark, file-based pipelines and report emission.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod pipeline;
pub mod report;
pub mod synth;
