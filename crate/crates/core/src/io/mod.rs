//! File formats: sweep tables (CSV), graymap images (PGM) and run manifests.

mod csv;
mod manifest;
mod pgm;

pub use self::csv::{read_sweep_csv, sweep_csv_string, write_sweep_csv, CSV_HEADER};
pub use self::manifest::{config_to_toml, RunManifest};
pub use self::pgm::{pgm_string, read_pgm, write_pgm};

use std::path::Path;

use crate::error::{Error, Result};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
