//! Dataset manifests: JSON-lines files listing one record per image.
//!
//! Each line is a JSON object with keys `image`, `gt`, `pred`, `conf`, and
//! optionally `logits`, all file paths. Relative paths are resolved against
//! the manifest's directory at load time. The class count and the set of
//! label ids treated as OOD are not part of the file; callers supply them
//! (the CLI takes `--num-classes` and `--ood-id`).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::IGNORE_ID;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub conf: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
}

impl ManifestRecord {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.image, &self.gt, &self.pred, &self.conf]
            .into_iter()
            .chain(self.logits.as_ref())
    }

    fn resolve(&mut self, base: &Path) {
        for path in [&mut self.image, &mut self.gt, &mut self.pred, &mut self.conf]
            .into_iter()
            .chain(self.logits.as_mut())
        {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    }
}

/// The default OOD label set: just the ignore id.
pub fn default_ood_ids() -> BTreeSet<u8> {
    [IGNORE_ID].into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub num_classes: usize,
    pub ood_ids: BTreeSet<u8>,
}

impl DatasetManifest {
    /// Builds a manifest in memory without touching the filesystem.
    pub fn from_records(
        records: Vec<ManifestRecord>,
        num_classes: usize,
        ood_ids: BTreeSet<u8>,
    ) -> Result<Self> {
        if num_classes < 2 || num_classes > 255 {
            return Err(Error::invalid(format!(
                "num_classes must be in 2..=255, got {num_classes}"
            )));
        }
        for (index, record) in records.iter().enumerate() {
            for path in record.paths() {
                if path.as_os_str().is_empty() {
                    return Err(Error::invalid(format!("record {index} has an empty path")));
                }
            }
        }
        Ok(DatasetManifest { records, num_classes, ood_ids })
    }

    /// Loads a JSON-lines manifest, resolving relative paths against the
    /// manifest's directory and checking that every referenced file exists.
    pub fn load(
        path: impl AsRef<Path>,
        num_classes: usize,
        ood_ids: BTreeSet<u8>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut record: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::decode(path, format!("line {}: {e}", lineno + 1))
            })?;
            record.resolve(&base);
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::usage(format!("empty manifest: {}", path.display())));
        }
        let manifest = DatasetManifest::from_records(records, num_classes, ood_ids)?;
        let mut missing = Vec::new();
        for (index, record) in manifest.records.iter().enumerate() {
            for p in record.paths() {
                if !p.is_file() {
                    missing.push((
                        index,
                        Error::invalid(format!("referenced file not found: {}", p.display())),
                    ));
                    break;
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Records(missing));
        }
        Ok(manifest)
    }

    /// Writes the records as JSON lines; paths are saved exactly as stored.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for record in &self.records {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::invalid(format!("cannot serialize record: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
