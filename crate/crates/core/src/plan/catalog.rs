use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::PatientContext;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("structure catalog entries must be non-empty")]
    EmptyName,
    #[error("duplicate structure `{0}` in catalog")]
    Duplicate(String),
    #[error("alias `{term}` targets `{target}`, which is not in the structure catalog")]
    AliasTarget { term: String, target: String },
    #[error("alias `{0}` has no targets")]
    EmptyAlias(String),
    #[error("unknown structure `{0}`: neither an alias nor a catalog name")]
    UnknownStructure(String),
    #[error("invalid margin range [{low}, {high}] mm")]
    InvalidRange { low: f64, high: f64 },
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// Names of the structures the segmentation provider can delineate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StructureCatalog {
    names: Vec<String>,
}

impl TryFrom<Vec<String>> for StructureCatalog {
    type Error = CatalogError;
    fn try_from(names: Vec<String>) -> Result<Self, CatalogError> {
        StructureCatalog::new(names)
    }
}

impl From<StructureCatalog> for Vec<String> {
    fn from(c: StructureCatalog) -> Self {
        c.names
    }
}

impl StructureCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CatalogError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(CatalogError::EmptyName);
            }
            if !seen.insert(n.as_str()) {
                return Err(CatalogError::Duplicate(n.clone()));
            }
        }
        Ok(StructureCatalog { names })
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        serde_json::from_str(text).map_err(|e| CatalogError::Json(e.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Guideline term → catalog structures. Terms match case-insensitively.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AliasTable {
    // lowercased term -> (term as written, targets)
    entries: BTreeMap<String, (String, Vec<String>)>,
}

impl AliasTable {
    pub fn new(map: BTreeMap<String, Vec<String>>, catalog: &StructureCatalog) -> Result<Self, CatalogError> {
        let mut entries = BTreeMap::new();
        for (term, targets) in map {
            if targets.is_empty() {
                return Err(CatalogError::EmptyAlias(term));
            }
            if let Some(bad) = targets.iter().find(|t| !catalog.contains(t)) {
                return Err(CatalogError::AliasTarget {
                    term,
                    target: bad.clone(),
                });
            }
            entries.insert(term.to_lowercase(), (term, targets));
        }
        Ok(AliasTable { entries })
    }

    /// Parse a JSON object `{"Lung": ["Lung_L", "Lung_R"], ...}`.
    pub fn from_json(text: &str, catalog: &StructureCatalog) -> Result<Self, CatalogError> {
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| CatalogError::Json(e.to_string()))?;
        AliasTable::new(map, catalog)
    }

    pub fn get(&self, term: &str) -> Option<&[String]> {
        self.entries.get(&term.to_lowercase()).map(|(_, t)| t.as_slice())
    }

    /// `(term, targets)` pairs in term order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.values().map(|(t, v)| (t.as_str(), v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Expand a guideline term into catalog structure names.
pub fn resolve_aliases(
    term: &str,
    table: &AliasTable,
    catalog: &StructureCatalog,
) -> Result<Vec<String>, CatalogError> {
    if let Some(targets) = table.get(term) {
        return Ok(targets.to_vec());
    }
    if catalog.contains(term) {
        return Ok(vec![term.to_string()]);
    }
    catalog
        .names()
        .iter()
        .find(|n| n.eq_ignore_ascii_case(term))
        .map(|n| vec![n.clone()])
        .ok_or_else(|| CatalogError::UnknownStructure(term.to_string()))
}

/// A guideline margin given as a range, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRangeSpec {
    low: f64,
    high: f64,
}

impl MarginRangeSpec {
    pub fn new(low: f64, high: f64) -> Result<Self, CatalogError> {
        if !(low.is_finite() && high.is_finite() && 0.0 <= low && low <= high) {
            return Err(CatalogError::InvalidRange { low, high });
        }
        Ok(MarginRangeSpec { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMargin {
    pub value_mm: f64,
    pub warning: Option<String>,
}

/// Pick a value from a margin range.
///
/// A physician preference for `role` in the context wins, clamped into the
/// range (with a warning when clamping changed it); otherwise the midpoint.
pub fn resolve_margin_range(spec: &MarginRangeSpec, role: &str, context: &PatientContext) -> ResolvedMargin {
    match context.preferences.get(role) {
        Some(&pref) => {
            let value_mm = pref.clamp(spec.low, spec.high);
            let warning = (value_mm != pref).then(|| {
                format!(
                    "preference {role} = {pref} mm outside [{}, {}] mm, clamped to {value_mm} mm",
                    spec.low, spec.high
                )
            });
            ResolvedMargin { value_mm, warning }
        }
        None => ResolvedMargin {
            value_mm: (spec.low + spec.high) / 2.0,
            warning: None,
        },
    }
}
