//! Consensus proximal-gradient solvers for convolutional sparse coding,
//! convolutional dictionary learning and multi-series anomaly detection.

pub mod anomaly;
pub mod cdl;
pub mod consensus;
pub mod container;
pub mod csc;
pub mod error;
pub mod prox;
pub mod step;
pub mod tensor;
pub mod trace;
pub mod vecops;

pub use error::{Error, Result};
