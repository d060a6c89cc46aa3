use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, RawTable, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingLabel,
    UnknownLabel,
    NonNumeric,
    Implausible,
    FieldCount,
}

impl RejectReason {
    /// Rows dropped for these reasons are ordinary preprocessing; the rest
    /// indicate a malformed file.
    pub fn is_screening(self) -> bool {
        matches!(self, RejectReason::MissingLabel | RejectReason::Implausible)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based line in the source file.
    pub line: u64,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub table: RawTable,
    pub rejected: Vec<RowDiagnostic>,
}

impl CsvLoad {
    pub fn malformed_rows(&self) -> impl Iterator<Item = &RowDiagnostic> {
        self.rejected.iter().filter(|d| !d.reason.is_screening())
    }
}

pub fn load_cohort_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<CsvLoad> {
    let file = File::open(path.as_ref())?;
    parse_cohort_csv(file, schema)
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

pub fn parse_cohort_csv<R: Read>(reader: R, schema: &Schema) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let mut expected = schema.feature_names();
    expected.push(schema.label_column.clone());
    let found: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if found != expected {
        return Err(Error::Csv(format!(
            "header {:?} does not match expected {:?}",
            found, expected
        )));
    }

    let d = schema.dim();
    let mut table = RawTable {
        schema: schema.clone(),
        cells: Vec::new(),
        labels: Vec::new(),
    };
    let mut rejected = Vec::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let reject = |reason, detail: String| RowDiagnostic { line, reason, detail };

        if record.len() != d + 1 {
            rejected.push(reject(
                RejectReason::FieldCount,
                format!("{} fields, expected {}", record.len(), d + 1),
            ));
            continue;
        }
        let label_cell = &record[d];
        if is_missing(label_cell) {
            rejected.push(reject(RejectReason::MissingLabel, "label is empty".into()));
            continue;
        }
        let Some(label) = schema.class_index(label_cell) else {
            rejected.push(reject(
                RejectReason::UnknownLabel,
                format!("unknown label {label_cell:?}"),
            ));
            continue;
        };

        let mut row = Vec::with_capacity(d);
        let mut problem = None;
        for (j, spec) in schema.features.iter().enumerate() {
            let cell = &record[j];
            if is_missing(cell) {
                row.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if !v.is_finite() => {
                    problem = Some((RejectReason::NonNumeric, format!("{}={cell:?}", spec.name)));
                    break;
                }
                Ok(v) if v < 0.0 && !spec.categorical => {
                    problem = Some((
                        RejectReason::Implausible,
                        format!("negative {} ({v})", spec.name),
                    ));
                    break;
                }
                Ok(v) => row.push(Some(v)),
                Err(_) => {
                    problem = Some((RejectReason::NonNumeric, format!("{}={cell:?}", spec.name)));
                    break;
                }
            }
        }
        match problem {
            Some((reason, detail)) => rejected.push(reject(reason, detail)),
            None => {
                table.cells.push(row);
                table.labels.push(label);
            }
        }
    }

    Ok(CsvLoad { table, rejected })
}

/// Writes a complete cohort with the schema header; labels as class names.
pub fn write_cohort_csv<W: Write>(writer: W, cohort: &Cohort, schema: &Schema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = schema.feature_names();
    header.push(schema.label_column.clone());
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    for r in 0..cohort.len() {
        let mut rec: Vec<String> = cohort.features.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(schema.class_names[cohort.labels[r]].clone());
        w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
