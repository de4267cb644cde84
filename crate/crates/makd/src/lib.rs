//! Experiment harness, file formats and command-line interface for modular
//! affinity-based distillation, built on `makd-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod record;

pub use config::{Arch, ExperimentConfig, Pair};
pub use error::{HarnessError, Result};
pub use harness::Harness;
pub use record::{GridSummary, RunRecord};
