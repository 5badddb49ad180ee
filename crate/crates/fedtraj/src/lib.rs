//! File formats, run configuration and the command-line front end for
//! `fedtraj-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod history;
pub mod report;
pub mod trajfile;

pub use config::RunConfig;
pub use error::{Error, Result};
