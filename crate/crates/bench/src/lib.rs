//! Simulation designs, metrics and the experiment harness around `sou_core`.

pub mod config;
pub mod design;
pub mod error;
pub mod idx;
pub mod input;
pub mod metrics;
pub mod runner;
pub mod selftest;

pub use error::{BenchError, Result};
