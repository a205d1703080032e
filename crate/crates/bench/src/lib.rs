//! Experiment harness: dataset ingestion, configuration, metrics and the
//! comparison protocols behind the `cnsprox` command-line tool.

pub mod config;
pub mod error;
pub mod experiment;
pub mod images;
pub mod metrics;
pub mod synth;

pub use error::{BenchError, Result};
