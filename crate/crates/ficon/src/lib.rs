//! Configuration, file formats and command dispatch for `ficon-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]
pub mod config;
pub mod export;
pub mod run;

pub use config::RunConfig;
pub use run::{run, Command, RunError, RunOutcome};
