//! CSV output with a provenance comment block.
//!
//! Every file starts with `#` lines naming the tool version, the seed and a
//! hash of the configuration, followed by a header row and the data rows.
//! Bodies never contain timestamps, so reruns with the same inputs produce
//! identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Comment lines written above the CSV header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Additional `key=value` or free-form notes, one per line.
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>, config_text: &str) -> Self {
        Self {
            seed,
            config_hash: Some(config_hash(config_text)),
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        write!(out, "# shishu {TOOL_VERSION}")?;
        if let Some(seed) = self.seed {
            write!(out, " seed={seed}")?;
        }
        if let Some(hash) = &self.config_hash {
            write!(out, " config={hash}")?;
        }
        writeln!(out)?;
        for note in &self.notes {
            writeln!(out, "# {note}")?;
        }
        Ok(())
    }
}

/// Incremental CSV writer; each row is flushed as it is written.
pub struct CsvLog<W: Write> {
    inner: csv::Writer<W>,
}

impl CsvLog<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, provenance: &Provenance) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), provenance)
    }
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W, provenance: &Provenance) -> Result<Self> {
        provenance.write_to(&mut out)?;
        Ok(Self {
            inner: csv::Writer::from_writer(out),
        })
    }

    pub fn row<R: Serialize>(&mut self, row: &R) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }

    /// Header row for logs that may end up with no data rows.
    pub fn header(&mut self, columns: &[&str]) -> Result<()> {
        self.inner.write_record(columns)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| crate::error::Error::Io(e.into_error()))
    }
}

/// Writes `rows` to `path` in one go.
pub fn write_csv<R: Serialize>(
    path: impl AsRef<Path>,
    provenance: &Provenance,
    rows: &[R],
) -> Result<()> {
    let mut log = CsvLog::create(path, provenance)?;
    for row in rows {
        log.row(row)?;
    }
    Ok(())
}

/// Renders `rows` to a string (same format as [`write_csv`]).
pub fn csv_string<R: Serialize>(provenance: &Provenance, rows: &[R]) -> Result<String> {
    let mut log = CsvLog::new(Vec::new(), provenance)?;
    for row in rows {
        log.row(row)?;
    }
    Ok(String::from_utf8(log.into_inner()?).expect("csv output is UTF-8"))
}
