//! Output files that appear under their final name only once complete.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use shishu::report::{csv_string, CsvLog, Provenance};

/// `<path>.partial`, the staging name used while a file is written.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

/// A file written under a staging name and renamed into place on
/// [`AtomicFile::commit`]. Dropping it uncommitted deletes the staging file.
pub struct AtomicFile {
    dest: PathBuf,
    staging: PathBuf,
    out: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(dest: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let dest = dest.into();
        let staging = partial_path(&dest);
        let file =
            File::create(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self {
            dest,
            staging,
            out: Some(BufWriter::new(file)),
        })
    }

    pub fn commit(mut self) -> anyhow::Result<()> {
        let out = self.out.take().expect("file is open until commit");
        let file = out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        drop(file);
        fs::rename(&self.staging, &self.dest)
            .with_context(|| format!("renaming into {}", self.dest.display()))?;
        Ok(())
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.out.as_mut().expect("file is open").write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.as_mut().expect("file is open").flush()
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.staging);
        }
    }
}

pub fn write_atomic(dest: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut file = AtomicFile::create(dest)?;
    file.write_all(bytes)?;
    file.commit()
}

/// Writes a complete CSV file with its provenance header.
pub fn write_csv<R: Serialize>(
    dest: &Path,
    provenance: &Provenance,
    rows: &[R],
) -> anyhow::Result<()> {
    write_atomic(dest, csv_string(provenance, rows)?.as_bytes())
}

/// Writes a CSV that has a header row but no data rows.
pub fn write_empty_csv(
    dest: &Path,
    provenance: &Provenance,
    columns: &[&str],
) -> anyhow::Result<()> {
    let mut log = CsvLog::new(Vec::new(), provenance)?;
    log.header(columns)?;
    write_atomic(dest, &log.into_inner()?)
}

/// Creates `dir` (and parents) with a readable error.
pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
