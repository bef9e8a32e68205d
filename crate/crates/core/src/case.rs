//! Case directories: `case.json` plus one NRRD per ROI.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Grid;

pub const MANIFEST_FILE: &str = "case.json";
pub const GTV: &str = "GTV";

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Patient information injected into planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientContext {
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_level: Option<String>,
    /// Margin role → preferred value in mm.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub preferences: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_site: Option<String>,
    pub initial_rois: Vec<String>,
}

impl PatientContext {
    pub fn new<S: Into<String>>(patient_id: impl Into<String>, initial_rois: impl IntoIterator<Item = S>) -> Self {
        PatientContext {
            patient_id: patient_id.into(),
            dose_level: None,
            preferences: BTreeMap::new(),
            tumor_site: None,
            initial_rois: initial_rois.into_iter().map(Into::into).collect(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if let Some((k, v)) = self.preferences.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(format!("preference `{k}` must be a non-negative length, got {v}"));
        }
        Ok(())
    }
}

/// Contents of `case.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub grid: Grid,
    pub context: PatientContext,
    /// Recorded foreground voxel counts per ROI file, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub voxel_counts: BTreeMap<String, usize>,
}

impl CaseManifest {
    pub fn load(case_dir: &Path) -> Result<Self, CaseError> {
        let path = case_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| CaseError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: CaseManifest = serde_json::from_str(&text).map_err(|e| CaseError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        manifest
            .context
            .check()
            .map_err(|message| CaseError::Manifest { path, message })?;
        Ok(manifest)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, case_dir: &Path) -> Result<(), CaseError> {
        let path = case_dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_json_pretty()).map_err(|source| CaseError::Io { path, source })
    }
}

/// Path of the NRRD file holding `roi` inside a case or output directory.
pub fn roi_path(dir: &Path, roi: &str) -> PathBuf {
    dir.join(format!("{roi}.nrrd"))
}
