//! Output directories that appear all at once or not at all.

use std::fs;
use std::path::{Path, PathBuf};

use rappca_core::data::fmt_f64;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "rappca";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files are written into a hidden sibling directory and moved into place
/// by [`commit`](Staging::commit). Dropping an uncommitted staging area
/// deletes it.
pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> CliResult<Self> {
        let name = dest
            .file_name()
            .ok_or_else(|| CliError::Config(format!("invalid output directory {}", dest.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Staging { tmp, dest: dest.to_path_buf(), committed: false })
    }

    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.tmp.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.path(rel)?, bytes)?;
        Ok(())
    }

    pub fn csv(&self, rel: &str) -> CliResult<Table> {
        Ok(Table { path: self.path(rel)?, rows: Vec::new() })
    }

    /// Writes `manifest.txt` listing every staged file with its hash, then
    /// replaces `dest` with the staged directory.
    pub fn commit(mut self, command: &str, config_hash: &str, seed: u64) -> CliResult<()> {
        let mut files = Vec::new();
        collect_files(&self.tmp, &self.tmp, &mut files)?;
        files.sort();
        let mut m = String::new();
        m.push_str(&format!("tool = {TOOL}\nversion = {VERSION}\ncommand = {command}\n"));
        m.push_str(&format!("config_sha256 = {config_hash}\nseed = {seed}\n"));
        for f in &files {
            let bytes = fs::read(self.tmp.join(f))?;
            m.push_str(&format!("file {f} = {}\n", sha256_hex(&bytes)));
        }
        fs::write(self.tmp.join("manifest.txt"), m)?;
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walked below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Rows accumulated in memory and written by [`finish`](Table::finish).
pub struct Table {
    path: PathBuf,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn header<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.rows.push(cols.iter().map(|c| c.as_ref().to_string()).collect());
        self
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn finish(self) -> CliResult<()> {
        let mut w = csv::Writer::from_path(&self.path)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell text for a float, round-trip exact.
pub fn num(v: f64) -> String {
    fmt_f64(v)
}

/// Writes a single file atomically: temp file in the same directory, then
/// rename.
pub fn write_file_atomic(dest: &Path, bytes: &[u8]) -> CliResult<()> {
    let parent = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if let Err(e) = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, dest)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
