//! File formats, plots, the parallel benchmark and the command-line front
//! end for `rompca-core`.

pub mod bench;
pub mod commands;
pub mod error;
pub mod format;
pub mod model_file;
pub mod svg;

pub use error::{CliError, CliResult};
