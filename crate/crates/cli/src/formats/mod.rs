//! File formats read and written by the command-line tools.

pub mod pfm;
pub mod ply;
pub mod tum;

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}
