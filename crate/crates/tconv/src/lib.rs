//! File formats and the command-line front end for `tconv-core`: mono WAV
//! ingestion, annotated dataset directories, checkpoints, JSON and CSV
//! exports, run manifests and key-value config files.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod manifest;
pub mod wav;

pub use error::{Error, ExitStatus, Result};
