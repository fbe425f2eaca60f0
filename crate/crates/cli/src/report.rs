//! NDJSON and CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Writes one JSON object per line.
pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes flat rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn ndjson<T: Serialize>(&self, stem: &str, records: &[T]) -> Result<PathBuf> {
        let p = self.path(&format!("{stem}.ndjson"));
        write_ndjson(&p, records)?;
        Ok(p)
    }

    pub fn csv<T: Serialize>(&self, stem: &str, rows: &[T]) -> Result<PathBuf> {
        let p = self.path(&format!("{stem}.csv"));
        write_csv(&p, rows)?;
        Ok(p)
    }
}
