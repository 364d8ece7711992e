//! Benchmark harness: data generation, ingest, configuration, reports, and the CLI.

pub mod cli;
pub mod config;
pub mod data;
pub mod experiment;
pub mod idx;
pub mod report;
