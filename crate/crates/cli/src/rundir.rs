//! Run directory layout, locking and the run manifest.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use nbe_core::Dataset;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.cfg";
pub const CHECKPOINT: &str = "checkpoint.txt";
pub const TRAINLOG: &str = "trainlog.csv";
pub const SPLIT: &str = "split.txt";
const LOCK: &str = ".lock";

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::usage(format!(
                "{} is in use by another command (delete {} if none is running)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// SHA-256 over the dataset shape, labels and feature bit patterns.
pub fn fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.len() as u64).to_le_bytes());
    h.update((ds.dim() as u64).to_le_bytes());
    h.update((ds.class_count() as u64).to_le_bytes());
    for &l in ds.labels() {
        h.update((l as u64).to_le_bytes());
    }
    for v in ds.features().as_slice() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The resolved configuration followed by `manifest.*` records. The file is
/// itself a valid config, so `train --config <run>/manifest.cfg` replays the
/// run.
pub fn manifest_text(cfg: &RunConfig, dataset_sha256: &str) -> String {
    let mut out = String::from("# written by nbe train before the first iteration\n");
    out.push_str(&cfg.to_text());
    let _ = writeln!(out, "manifest.dataset_sha256 = {dataset_sha256}");
    let _ = writeln!(out, "manifest.train_seed = {}", cfg.seed);
    let _ = writeln!(out, "manifest.split_seed = {}", cfg.split_seed);
    let _ = writeln!(out, "manifest.checkpoint = {CHECKPOINT}");
    let _ = writeln!(out, "manifest.trainlog = {TRAINLOG}");
    let _ = writeln!(out, "manifest.split = {SPLIT}");
    let _ = writeln!(out, "manifest.version = {}", env!("CARGO_PKG_VERSION"));
    out
}

/// Fails when a pinned dataset hash does not match the loaded data.
pub fn check_fingerprint(cfg: &RunConfig, actual: &str) -> CliResult<()> {
    match &cfg.dataset_sha256 {
        Some(expected) if expected != actual => Err(CliError::usage(format!(
            "dataset content hash {actual} differs from the pinned {expected}"
        ))),
        _ => Ok(()),
    }
}

pub fn write(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nbe_core::Matrix;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        let err = RunLock::acquire(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Dataset::new(Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(), vec![0, 1], 2).unwrap();
        let b = Dataset::new(Matrix::from_vec(2, 1, vec![0.0, 1.5]).unwrap(), vec![0, 1], 2).unwrap();
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a).len(), 64);
    }
}
