//! Standard-library companion of `shift-core`: file formats, a thread-pool
//! executor, the evaluation harness and the `shift` command-line tool.

pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod log;
pub mod pool;

pub use error::{CliError, Result};
