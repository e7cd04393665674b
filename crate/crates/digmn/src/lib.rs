//! File formats, parallel drivers and the command line for the digmn
//! pipeline. The numerical work lives in `digmn-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, CliResult, ExitKind};
