//! Files, reports and the command-line driver around `fairgrade-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::{Error, Result};
