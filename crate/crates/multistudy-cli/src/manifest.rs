//! Dataset manifests: a TOML file naming per-study CSVs and the columns to
//! read from them.
//!
//! Every study must supply the declared outcome and predictor columns;
//! exactly those columns are read (extras are ignored), missing or
//! non-numeric cells are rejected with their row number, and an optional
//! intercept prepends a ones column to every design.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use multistudy::StudyData;

use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyEntry {
    pub id: String,
    /// CSV path, resolved relative to the manifest file's directory.
    pub path: PathBuf,
    pub role: Role,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub outcome: String,
    /// Predictor column names, in design-column order.
    pub predictors: Vec<String>,
    /// Prepend a ones column as design column 0.
    #[serde(default)]
    pub intercept: bool,
    pub studies: Vec<StudyEntry>,
}

impl DatasetManifest {
    /// Design width including the intercept column.
    pub fn p(&self) -> usize {
        self.predictors.len() + usize::from(self.intercept)
    }

    /// Design-column index of a named predictor.
    pub fn column_of(&self, name: &str) -> CliResult<usize> {
        self.predictors
            .iter()
            .position(|p| p == name)
            .map(|i| i + usize::from(self.intercept))
            .ok_or_else(|| CliError::Input(format!("unknown predictor column '{name}'")))
    }

    /// Random-effect design columns: the named predictors, or every
    /// (non-intercept) predictor when no names are given.
    pub fn re_indices(&self, names: Option<&[String]>) -> CliResult<Vec<usize>> {
        match names {
            None => Ok((0..self.predictors.len())
                .map(|i| i + usize::from(self.intercept))
                .collect()),
            Some(names) => {
                if names.is_empty() {
                    return Err(CliError::Input(
                        "at least one random-effect column is required".to_string(),
                    ));
                }
                let mut cols: Vec<usize> =
                    names.iter().map(|n| self.column_of(n)).collect::<CliResult<_>>()?;
                cols.sort_unstable();
                cols.dedup();
                if cols.len() != names.len() {
                    return Err(CliError::Input(
                        "duplicate names in --re-columns".to_string(),
                    ));
                }
                Ok(cols)
            }
        }
    }

    /// Design-column name for reports (`(intercept)` for column 0 when an
    /// intercept is present).
    pub fn column_name(&self, index: usize) -> String {
        if self.intercept && index == 0 {
            "(intercept)".to_string()
        } else {
            self.predictors[index - usize::from(self.intercept)].clone()
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.outcome.is_empty() {
            return Err(CliError::Input("manifest: empty outcome name".to_string()));
        }
        if self.predictors.is_empty() {
            return Err(CliError::Input(
                "manifest: at least one predictor is required".to_string(),
            ));
        }
        for (i, a) in self.predictors.iter().enumerate() {
            if a == &self.outcome {
                return Err(CliError::Input(format!(
                    "manifest: predictor '{a}' duplicates the outcome column"
                )));
            }
            if self.predictors[..i].contains(a) {
                return Err(CliError::Input(format!(
                    "manifest: duplicate predictor '{a}'"
                )));
            }
        }
        if self.studies.is_empty() {
            return Err(CliError::Input("manifest: no studies listed".to_string()));
        }
        for (i, s) in self.studies.iter().enumerate() {
            if s.id.is_empty() {
                return Err(CliError::Input("manifest: empty study id".to_string()));
            }
            if self.studies[..i].iter().any(|t| t.id == s.id) {
                return Err(CliError::Input(format!(
                    "manifest: duplicate study id '{}'",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// Manifest plus the loaded study data, split by role.
pub struct LoadedData {
    pub manifest: DatasetManifest,
    pub train: Vec<StudyData>,
    pub test: Vec<StudyData>,
}

pub fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Load the manifest and every study CSV it names.
pub fn load_data(path: &Path) -> CliResult<LoadedData> {
    let manifest = load_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.studies {
        let csv_path = base.join(&entry.path);
        let study = read_study_csv(&csv_path, entry, &manifest)?;
        match entry.role {
            Role::Train => train.push(study),
            Role::Test => test.push(study),
        }
    }
    Ok(LoadedData {
        manifest,
        train,
        test,
    })
}

fn read_study_csv(
    path: &Path,
    entry: &StudyEntry,
    manifest: &DatasetManifest,
) -> CliResult<StudyData> {
    let fail = |detail: String| {
        CliError::Input(format!("study '{}' ({}): {detail}", entry.id, path.display()))
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let position = |name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fail(format!("column '{name}' missing from header")))
    };
    let y_col = position(&manifest.outcome)?;
    let x_cols: Vec<usize> = manifest
        .predictors
        .iter()
        .map(|n| position(n))
        .collect::<CliResult<_>>()?;

    let p = manifest.p();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let record = record.map_err(|e| fail(format!("row {row}: {e}")))?;
        let cell = |col: usize, name: &str| -> CliResult<f64> {
            let raw = record
                .get(col)
                .ok_or_else(|| fail(format!("row {row}: column '{name}' missing")))?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| fail(format!("row {row}: column '{name}' is not numeric: '{raw}'")))?;
            if !v.is_finite() {
                return Err(fail(format!("row {row}: column '{name}' is not finite")));
            }
            Ok(v)
        };
        y.push(cell(y_col, &manifest.outcome)?);
        if manifest.intercept {
            x_rows.push(1.0);
        }
        for (&col, name) in x_cols.iter().zip(&manifest.predictors) {
            x_rows.push(cell(col, name)?);
        }
    }
    if y.is_empty() {
        return Err(fail("no data rows".to_string()));
    }
    let n = y.len();
    let x = DMatrix::from_fn(n, p, |r, c| x_rows[r * p + c]);
    StudyData::new(entry.id.clone(), x, DVector::from_vec(y))
        .map_err(|e| fail(e.to_string()))
}
