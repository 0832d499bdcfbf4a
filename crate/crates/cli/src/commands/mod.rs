pub mod bandwidth;
pub mod fit;
pub mod predict;
pub mod simulate;
pub mod test;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

/// Writes to `path`, or to standard output when there is none.
pub(crate) fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|source| CliError::Output { path: PathBuf::from("<stdout>"), source }),
    }
}

/// `model.json` -> `model.<suffix>`.
pub(crate) fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub(crate) fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> sckls_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
