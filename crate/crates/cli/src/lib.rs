//! File formats and command implementations behind the `aim` binary.
//!
//! - [`tmap`]: `TMAPv1` binary checkpoints.
//! - [`calib`]: calibration sets as CSV or `CALBv1` binary.
//! - [`profile_io`]: activation/sensitivity profiles as JSON.
//! - [`scores`]: benchmark score CSVs.
//! - [`spec_io`]: model spec JSON.
//! - [`manifest`]: run manifests written next to every output.
//! - [`commands`]: the subcommands, callable without going through argv.

pub mod calib;
pub mod commands;
mod error;
pub mod manifest;
pub mod profile_io;
pub mod scores;
pub mod spec_io;
pub mod tmap;

pub use error::{CliError, ExitCode, FormatError};

use std::path::Path;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}
