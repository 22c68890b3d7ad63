//! File formats, model checkpoints and the `prose-forge` command line for
//! the algorithms in `prose_forge_core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod formats;

pub use cli::run_cli;
