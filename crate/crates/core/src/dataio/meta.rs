use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance sidecar stored next to an FVEC file as `<stem>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub backbone: String,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// `data/train.fvec` → `data/train.meta.json`
pub fn meta_path(fvec_path: impl AsRef<Path>) -> PathBuf {
    fvec_path.as_ref().with_extension("meta.json")
}

impl DatasetMeta {
    pub fn write_for(&self, fvec_path: impl AsRef<Path>) -> Result<()> {
        let path = meta_path(fvec_path);
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// `None` when the sidecar does not exist.
    pub fn read_for(fvec_path: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = meta_path(fvec_path);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
        }
    }
}
