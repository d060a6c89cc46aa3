//! Cohort ingestion and preprocessing.
//!
//! Raw tables carry optional cells; imputation with training-row statistics
//! turns them into a complete [`Cohort`], and a [`Standardizer`] fitted on
//! the same training rows maps features to z-scores.

mod csv;
mod preprocess;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use self::csv::{load_cohort_csv, parse_cohort_csv, write_cohort_csv, CsvLoad, RejectReason, RowDiagnostic};
pub use preprocess::{stratified_split, Imputer, SplitIndices, Standardizer};
pub use synthetic::{generate_synthetic_cohort, FeatureDistribution, SyntheticConfig};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(default)]
    pub categorical: bool,
}

/// Column layout of a cohort file: features in order, then the label column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub label_column: String,
    pub class_names: Vec<String>,
}

impl Schema {
    /// The seven clinical features used throughout the crate.
    pub fn diabetes() -> Self {
        let features = ["age", "bmi", "fpg", "hba1c", "sbp", "dbp", "pregnancies"]
            .into_iter()
            .map(|name| FeatureSpec {
                name: name.to_string(),
                categorical: false,
            })
            .collect();
        Self {
            features,
            label_column: "label".into(),
            class_names: vec!["type1".into(), "type2".into(), "gestational".into()],
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(label))
    }
}

impl Default for Schema {
    fn default() -> Self {
        Self::diabetes()
    }
}

/// Parsed rows before imputation; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub schema: Schema,
    pub cells: Vec<Vec<Option<f64>>>,
    pub labels: Vec<usize>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> RawTable {
        RawTable {
            schema: self.schema.clone(),
            cells: rows.iter().map(|&r| self.cells[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }
}

/// Complete feature matrix with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Cohort {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() != feature_names.len() {
            return Err(Error::Invalid(format!(
                "{} feature columns for {} names",
                features.cols(),
                feature_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Invalid(format!("label {bad} out of range")));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// View as a raw table with every cell present.
    pub fn to_raw(&self, schema: &Schema) -> RawTable {
        let cells = (0..self.len())
            .map(|r| self.features.row(r).iter().map(|&v| Some(v)).collect())
            .collect();
        RawTable {
            schema: schema.clone(),
            cells,
            labels: self.labels.clone(),
        }
    }
}
