//! Experiment runner behind the `tcblran` binary: configuration sources,
//! run orchestration, on-disk artifacts and SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod plot;

pub use error::{CliError, CliResult};
