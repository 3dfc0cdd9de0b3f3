//! Report files: pretty JSON and RFC-4180 CSV, written atomically.

use std::fs;
use std::path::{Path, PathBuf};

use geovar::report::{format_float, to_json, Envelope};
use serde::Serialize;

use crate::CliError;

/// Output directory for one command.
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Writes through a temporary sibling and renames, so readers never see
    /// a partial file.
    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        let io = |e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
        fs::write(&tmp, bytes).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(path)
    }

    /// Writes `body` wrapped with the schema version; returns the JSON text.
    pub fn json<T: Serialize>(&self, name: &str, command: &str, body: &T) -> Result<String, CliError> {
        let text = to_json(&Envelope::new(command, body)).map_err(|e| CliError::Numerical(format!("cannot serialize report: {e}")))?;
        self.write_bytes(name, text.as_bytes())?;
        Ok(text)
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Config(format!("cannot write {name}: {e}"));
        w.write_record(&table.header).map_err(err)?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| format_float(*v))).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Config(format!("cannot write {name}: {e}")))?;
        self.write_bytes(name, &bytes)?;
        Ok(())
    }
}

/// A numeric table with named columns.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Column names `prefix0, prefix1, …`.
pub fn columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}
