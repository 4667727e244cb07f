use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One clip directory; `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub clips: Vec<ManifestEntry>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            clips: Vec::new(),
        }
    }
}

impl DatasetManifest {
    /// Reads `path`, which may name the manifest file or its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), DataError> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file)
            .map_err(|e| DataError::Manifest(format!("{}: {e}", file.display())))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, DataError> {
        let file = dir.join(MANIFEST_FILE);
        fs::write(&file, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(file)
    }

    pub fn with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.clips
            .iter()
            .filter(move |c| c.tags.iter().any(|t| t == tag))
    }
}
