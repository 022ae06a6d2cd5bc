use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::prompts::{dataset_key, DemographicAxis};

/// Dataset-level metadata stored as JSON next to an EMBS file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub axes: Vec<DemographicAxis>,
    pub metric: Metric,
    #[serde(default)]
    pub prompt_files: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn new(dataset_name: impl Into<String>, classes: Vec<String>, metric: Metric) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            classes,
            axes: Vec::new(),
            metric,
            prompt_files: BTreeMap::new(),
        }
    }

    /// Accuracy metric each benchmark reports by convention, when known.
    pub fn conventional_metric(dataset_name: &str) -> Option<Metric> {
        match dataset_key(dataset_name).as_str() {
            "flowers102" | "fgvcaircraft" => Some(Metric::MeanPerClass),
            "dtd" | "resisc45" | "idenprof" => Some(Metric::Top1),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::ManifestInvalid(format!(
                "need at least 2 classes, found {}",
                self.classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::ManifestInvalid(format!("duplicate class name {c:?}")));
            }
        }
        if let Some(expected) = Self::conventional_metric(&self.dataset_name) {
            if expected != self.metric {
                return Err(Error::ManifestInvalid(format!(
                    "{} is evaluated with {expected}, manifest says {}",
                    self.dataset_name, self.metric
                )));
            }
        }
        for axis in &self.axes {
            axis.validate()?;
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
