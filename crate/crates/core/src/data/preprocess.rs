use serde::{Deserialize, Serialize};

use super::{Cohort, RawTable};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Fill values learned from training rows: median for continuous features,
/// most frequent value for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fill: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut best = (values[0], 0usize);
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        if j - i > best.1 {
            best = (values[i], j - i);
        }
        i = j;
    }
    best.0
}

impl Imputer {
    pub fn fit(table: &RawTable, train: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Invalid("imputation needs training rows".into()));
        }
        let fill = table
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let mut observed: Vec<f64> =
                    train.iter().filter_map(|&r| table.cells[r][j]).collect();
                if observed.is_empty() {
                    return Err(Error::Invalid(format!(
                        "feature {} has no observed training values",
                        spec.name
                    )));
                }
                Ok(if spec.categorical {
                    mode(&mut observed)
                } else {
                    median(&mut observed)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fill })
    }

    pub fn apply_row(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        if row.len() != self.fill.len() {
            return Err(Error::Invalid(format!(
                "{} values, expected {}",
                row.len(),
                self.fill.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&self.fill)
            .map(|(c, f)| c.unwrap_or(*f))
            .collect())
    }

    /// Completes every row of `table`.
    pub fn apply(&self, table: &RawTable) -> Result<Cohort> {
        let d = self.fill.len();
        let mut data = Vec::with_capacity(table.len() * d);
        for row in &table.cells {
            data.extend(self.apply_row(row)?);
        }
        Cohort::new(
            Matrix::new(table.len(), d, data)?,
            table.labels.clone(),
            table.schema.feature_names(),
            table.schema.class_names.clone(),
        )
    }
}

/// Per-feature z-scoring with statistics from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix, train: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Invalid("standardizer needs training rows".into()));
        }
        let d = features.cols();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in train {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in train {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        let data = (0..features.rows())
            .flat_map(|r| self.transform_row(features.row(r)))
            .collect();
        Matrix::new(features.rows(), features.cols(), data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded per-class shuffle; each class contributes
/// `round(count * test_fraction)` rows to the test side.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::Invalid(format!("label {l} out of range")))?
            .push(i);
    }
    let mut rng = Rng::seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Invalid(format!(
                "class {class} has {} members; stratified split needs at least 2",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}
