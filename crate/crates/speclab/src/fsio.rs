//! Small file helpers that annotate I/O errors with the path involved.

use std::path::Path;

use crate::error::{Error, Result};

/// Read a whole file into a string, annotating errors with the path.
pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Read a whole file into bytes, annotating errors with the path.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write a string to a file, annotating errors with the path.
pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
