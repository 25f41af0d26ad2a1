//! Result persistence: one writer per output directory, atomic renames, and
//! a manifest indexing every file written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// `manifest.json`. Wall-clock data lives in `timing.json` so that the
/// manifest itself is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub files: Vec<FileEntry>,
    pub timing_file: String,
    pub suites: Vec<SuiteResult>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub start_unix: f64,
    pub end_unix: f64,
    pub elapsed_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    started: f64,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), started: unix_now() })
    }

    /// Backdates the start time recorded in `timing.json`.
    pub fn started_at(mut self, unix: f64) -> Self {
        self.started = unix;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        write_atomic(&path, bytes)?;
        let entry =
            FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: hex(&Sha256::digest(bytes)) };
        match self.files.iter_mut().find(|f| f.path == rel) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write(rel, &bytes)
    }

    /// Gnuplot data: a comment header, then one block per series separated
    /// by two blank lines (addressable with `index`).
    pub fn write_dat(&mut self, rel: &str, header: &str, blocks: &[Vec<(f64, f64)>]) -> Result<PathBuf> {
        let mut s = format!("# {header}\n");
        for (i, b) in blocks.iter().enumerate() {
            if i > 0 {
                s.push_str("\n\n");
            }
            for (x, y) in b {
                s.push_str(&format!("{x} {y}\n"));
            }
        }
        self.write(rel, s.as_bytes())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `timing.json` and then `manifest.json`, which lists every
    /// other file.
    pub fn finish(mut self, command: &str, config_hash: &str, master_seed: u64, suites: Vec<SuiteResult>) -> Result<RunManifest> {
        let end = unix_now();
        let timing = Timing { start_unix: self.started, end_unix: end, elapsed_s: end - self.started };
        let text = serde_json::to_string_pretty(&timing)? + "\n";
        write_atomic(&self.path("timing.json"), text.as_bytes())?;
        let all_pass = suites.iter().all(|s| s.pass);
        let mut files = std::mem::take(&mut self.files);
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.into(),
            config_hash: config_hash.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            master_seed,
            files,
            timing_file: "timing.json".into(),
            suites,
            all_pass,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&self.path("manifest.json"), text.as_bytes())?;
        Ok(manifest)
    }
}

/// Checks that every file in a manifest exists with the recorded hash.
pub fn verify_manifest(root: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(root.join("manifest.json"))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    for f in &m.files {
        let bytes = fs::read(root.join(&f.path))?;
        if hex(&Sha256::digest(&bytes)) != f.sha256 || bytes.len() as u64 != f.bytes {
            return Err(crate::error::Error::Internal(format!("{} does not match the manifest", f.path)));
        }
    }
    if !root.join(&m.timing_file).exists() {
        return Err(crate::error::Error::Internal("timing file missing".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_indexes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.txt", b"x").unwrap();
        out.write_dat("sub/s.dat", "x y", &[vec![(1.0, 2.0)], vec![(3.0, 4.5)]]).unwrap();
        let m = out.finish("test", "h", 1, vec![]).unwrap();
        assert_eq!(m.files.len(), 2);
        assert!(m.all_pass);
        let back = verify_manifest(dir.path()).unwrap();
        assert_eq!(back, m);
        let dat = fs::read_to_string(dir.path().join("sub/s.dat")).unwrap();
        assert_eq!(dat, "# x y\n1 2\n\n\n3 4.5\n");
        assert!(!dir.path().join(".a.txt.tmp").exists());
        fs::write(dir.path().join("a.txt"), b"y").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }
}
