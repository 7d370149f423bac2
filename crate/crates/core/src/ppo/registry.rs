//! Scenario to checkpoint mapping with nearest-label fallback.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioLabel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoRegistry {
    pub checkpoints: BTreeMap<ScenarioLabel, PathBuf>,
}

impl PpoRegistry {
    pub fn insert(&mut self, label: ScenarioLabel, path: PathBuf) {
        self.checkpoints.insert(label, path);
    }

    /// The checkpoint for `label`, or the closest available label's.
    pub fn resolve(&self, label: ScenarioLabel) -> Result<(ScenarioLabel, &Path)> {
        std::iter::once(label)
            .chain(label.fallbacks())
            .find_map(|l| self.checkpoints.get(&l).map(|p| (l, p.as_path())))
            .ok_or_else(|| Error::MissingCheckpoint(format!("no PPO checkpoint for scenario {label} or any fallback")))
    }

    /// Loads a registry; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut reg: PpoRegistry = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in reg.checkpoints.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
