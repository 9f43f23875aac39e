//! Std companion to `sanity-core`: the checkpoint and IDX file formats,
//! explanation files, the parallel sanity-check runner, CSV/JSON/SVG
//! reports and the `ssc` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod datasets;
mod error;
pub mod experiment;
pub mod explanation_io;
pub mod idx;
pub mod report;

pub use error::{HarnessError, Result};
