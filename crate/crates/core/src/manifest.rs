//! Dataset manifests: a TOML file listing named datasets with their file
//! paths, domain tags and optional column-kind overrides.
//!
//! ```toml
//! [[dataset]]
//! name = "orchard"
//! path = "orchard.csv"            # relative to the manifest file
//! domain = "biology-ecology"
//!
//! [dataset.kinds]                 # optional per-column overrides
//! ring = "categorical"
//! ```

use crate::error::CoreError;
use crate::table::{ColumnKind, DomainTag, Table};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
struct ManifestFile {
    #[serde(default)]
    dataset: Vec<RawEntry>,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    name: String,
    path: String,
    domain: String,
    #[serde(default)]
    kinds: HashMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub domain: DomainTag,
    pub kind_overrides: HashMap<String, ColumnKind>,
}

/// A parsed manifest; dataset paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let parsed: ManifestFile = toml::from_str(&text)
            .map_err(|e| CoreError::parse(path.display().to_string(), e.to_string()))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        let mut entries = Vec::with_capacity(parsed.dataset.len());
        for raw in parsed.dataset {
            let domain: DomainTag = raw
                .domain
                .parse()
                .map_err(|e| CoreError::parse(path.display().to_string(), format!("{e}")))?;
            let mut kind_overrides = HashMap::new();
            for (col, kind) in raw.kinds {
                kind_overrides.insert(col, kind.parse::<ColumnKind>()?);
            }
            entries.push(ManifestEntry {
                name: raw.name,
                path: root.join(raw.path),
                domain,
                kind_overrides,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&ManifestEntry, CoreError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::UnknownDataset(name.to_string()))
    }

    /// Loads the named dataset through its manifest entry.
    pub fn load_table(&self, name: &str) -> Result<Table, CoreError> {
        let e = self.entry(name)?;
        crate::table::load_table(&e.path, &e.name, e.domain, &e.kind_overrides)
    }
}
