//! Content-addressed stage directories.
//!
//! A stage writes into `<name>.partial`, drops a `DONE` marker holding the
//! key material, and renames the directory into place. A directory with a
//! marker is a cache hit; anything else is rebuilt from scratch.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

const MARKER: &str = "DONE";

/// Short hex digest of the JSON encoding of `value`.
pub fn key<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("stage inputs serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDir {
    pub path: PathBuf,
    pub key: String,
}

impl StageDir {
    /// `<root>/<group>/<name>-<key>`.
    pub fn new<T: Serialize + ?Sized>(root: &Path, group: &str, name: &str, inputs: &T) -> Self {
        let key = key(inputs);
        Self {
            path: root.join(group).join(format!("{name}-{key}")),
            key,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.path.join(MARKER).is_file()
    }

    /// Runs `build` unless the stage is already complete. Returns whether
    /// it ran.
    pub fn ensure(&self, build: impl FnOnce(&Path) -> Result<()>) -> Result<bool> {
        if self.is_complete() {
            log::info!("cache hit: {}", self.path.display());
            return Ok(false);
        }
        let partial = self.path.with_extension("partial");
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
        }
        fs::create_dir_all(&partial)?;
        build(&partial)?;
        fs::write(partial.join(MARKER), &self.key)?;
        if self.path.exists() {
            fs::remove_dir_all(&self.path)?;
        }
        fs::rename(&partial, &self.path)?;
        log::info!("built {}", self.path.display());
        Ok(true)
    }
}
