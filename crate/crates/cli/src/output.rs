//! Atomic output files and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use noisy_cluster::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

/// Output directory that records the digest of everything written to it.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, Error> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Lets `write` fill a temporary file, then renames it to `name`.
    pub fn write_with(
        &mut self,
        name: &str,
        write: impl FnOnce(&Path) -> noisy_cluster::Result<()>,
    ) -> Result<PathBuf, Error> {
        let tmp = NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        write(tmp.path())?;
        let bytes = fs::read(tmp.path()).map_err(|e| io_err(tmp.path(), e))?;
        let target = self.dir.join(name);
        tmp.persist(&target).map_err(|e| io_err(&target, e.error))?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_with(name, |p| {
            let mut f = fs::File::create(p).map_err(|e| io_err(p, e))?;
            f.write_all(text.as_bytes()).map_err(|e| io_err(p, e))?;
            Ok(())
        })
    }

    /// Writes `manifest.json`: the resolved config, the defaults actually used
    /// and the SHA-256 of every primary output.
    pub fn finish(
        mut self,
        subcommand: &str,
        config: &impl Serialize,
        resolved: serde_json::Value,
    ) -> Result<PathBuf, Error> {
        let outputs: serde_json::Map<String, serde_json::Value> = self
            .files
            .iter()
            .map(|(n, h)| (n.clone(), serde_json::Value::String(h.clone())))
            .collect();
        let manifest = serde_json::json!({
            "run_manifest": 1,
            "subcommand": subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "resolved": resolved,
            "outputs": outputs,
        });
        self.write_json("manifest.json", &manifest)
    }
}
