//! File formats, checkpoints, run configuration and the `gdce` command line
//! on top of `gdce-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{DataError, Result};
