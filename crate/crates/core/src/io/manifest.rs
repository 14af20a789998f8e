//! Dataset manifests: which GRD1 files form the ensemble and the label.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{regrid_like, EnsembleSample, GridField, NormMode};
use crate::io::atomic::{read_file, write_atomic};
use crate::io::grd::read_grd;
use crate::train::{Dataset, SplitSpec};

/// Days whose label has more missing cells than this are dropped.
pub const MAX_LABEL_MISSING: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub resolution_deg: f64,
    /// First day in the file; consecutive daily steps follow.
    pub start_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub members: Vec<FileEntry>,
    pub label: FileEntry,
    pub split: SplitSpec,
    #[serde(default)]
    pub normalization: NormMode,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Manifest("at least one member is required".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.members {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate member name {:?}",
                    m.name
                )));
            }
        }
        self.split.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

struct Series {
    start: NaiveDate,
    fields: Vec<GridField>,
}

impl Series {
    fn at(&self, date: NaiveDate) -> Option<&GridField> {
        let offset = (date - self.start).num_days();
        usize::try_from(offset)
            .ok()
            .and_then(|i| self.fields.get(i))
    }
}

fn read_series(base: &Path, entry: &FileEntry) -> Result<Series> {
    Ok(Series {
        start: entry.start_date,
        fields: read_grd(&resolve(base, &entry.path))?,
    })
}

/// Reads every file, regrids members onto the label grid and pairs them by date.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let label = read_series(base, &manifest.label)?;
    let members = manifest
        .members
        .iter()
        .map(|m| read_series(base, m))
        .collect::<Result<Vec<_>>>()?;

    let dates: Vec<NaiveDate> = (0..label.fields.len())
        .map(|i| label.start + Days::new(i as u64))
        .filter(|d| *d <= manifest.split.test_end)
        .collect();
    let mut missing: Vec<NaiveDate> = dates
        .iter()
        .copied()
        .filter(|&d| members.iter().any(|m| m.at(d).is_none()))
        .collect();
    if !missing.is_empty() {
        missing.dedup();
        return Err(Error::Alignment { missing });
    }

    let mut samples = Vec::with_capacity(dates.len());
    for date in dates {
        let y = label.at(date).expect("date taken from the label series");
        if y.missing_fraction() > MAX_LABEL_MISSING {
            log::warn!(
                "{date}: {:.1}% of label cells missing, day skipped",
                100.0 * y.missing_fraction()
            );
            continue;
        }
        let g = y.geometry();
        let xs = members
            .iter()
            .map(|m| regrid_like(m.at(date).expect("alignment checked"), &g))
            .collect::<Result<Vec<_>>>()?;
        samples.push(EnsembleSample::new(date, xs, y.clone())?);
    }
    let names = manifest.members.iter().map(|m| m.name.clone()).collect();
    Dataset::new(names, samples, manifest.split, manifest.normalization)
}
