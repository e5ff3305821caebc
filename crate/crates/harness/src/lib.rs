//! Experiment harness over the consultation-map controller.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod render;

pub use error::HarnessError;
pub use experiments::{aggregate, AggregateRow, Env};
