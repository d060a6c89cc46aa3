//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossBreakdown, ModelParams, Variant, PARAM_NAMES};
use crate::data::{Imputer, RawTable, Standardizer};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::trainer::{EvalReport, TrainConfig, TrainedModel};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: &str, m: &Matrix) -> Self {
        Self {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.shape[0], self.shape[1], self.data.clone())
            .map_err(|e| Error::Model(format!("tensor {}: {e}", self.name)))
    }
}

/// On-disk form of a [`TrainedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub h: usize,
    pub d: usize,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub imputer: Imputer,
    pub k_min: usize,
    pub k_max: usize,
    pub variant: Variant,
    pub config: TrainConfig,
    pub weights: Vec<NamedTensor>,
    pub x_train: NamedTensor,
    pub y_train: Vec<usize>,
    #[serde(default)]
    pub loss_curve: Vec<LossBreakdown>,
    #[serde(default)]
    pub holdout: Option<RawTable>,
    #[serde(default)]
    pub report: Option<EvalReport>,
}

impl From<&TrainedModel> for ModelFile {
    fn from(m: &TrainedModel) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            h: m.params.hidden(),
            d: m.params.input_dim(),
            class_names: m.class_names.clone(),
            feature_names: m.feature_names.clone(),
            standardizer: m.standardizer.clone(),
            imputer: m.imputer.clone(),
            k_min: m.config.k_min,
            k_max: m.config.k_max,
            variant: m.config.variant,
            config: m.config.clone(),
            weights: PARAM_NAMES
                .iter()
                .zip(m.params.tensors())
                .map(|(n, t)| NamedTensor::new(n, t))
                .collect(),
            x_train: NamedTensor::new("x_train", &m.x_train),
            y_train: m.y_train.clone(),
            loss_curve: m.loss_curve.clone(),
            holdout: m.holdout.clone(),
            report: m.report.clone(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<TrainedModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "unsupported schema version {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let bad = |msg: String| Err(Error::Model(msg));
        if self.feature_names.len() != self.d
            || self.standardizer.mean.len() != self.d
            || self.standardizer.std.len() != self.d
            || self.imputer.fill.len() != self.d
        {
            return bad(format!("feature metadata does not match d={}", self.d));
        }
        if self.config.hidden != self.h
            || self.config.k_min != self.k_min
            || self.config.k_max != self.k_max
            || self.config.variant != self.variant
        {
            return bad("config disagrees with model header".into());
        }
        self.config.validate()?;
        let named = self
            .weights
            .iter()
            .map(|t| Ok((t.name.clone(), t.to_matrix()?)))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_named(&named, self.d, self.h, self.class_names.len())?;
        let x_train = self.x_train.to_matrix()?;
        if x_train.cols() != self.d || x_train.rows() != self.y_train.len() || x_train.rows() == 0 {
            return bad(format!(
                "training matrix {:?} with {} labels",
                x_train.shape(),
                self.y_train.len()
            ));
        }
        if self.y_train.iter().any(|&l| l >= self.class_names.len()) {
            return bad("training label out of range".into());
        }
        Ok(TrainedModel {
            params,
            imputer: self.imputer,
            standardizer: self.standardizer,
            config: self.config,
            feature_names: self.feature_names,
            class_names: self.class_names,
            x_train,
            y_train: self.y_train,
            loss_curve: self.loss_curve,
            holdout: self.holdout,
            report: self.report,
        })
    }
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
