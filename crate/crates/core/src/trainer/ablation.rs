use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_table, TrainConfig};
use crate::data::RawTable;
use crate::error::{Error, Result};
use crate::model::Variant;

pub const ABLATION_NAMES: [&str; 5] = ["full", "no_blending", "no_consistency", "vanilla_gcn", "mlp"];

/// The config used for one ablation row, derived from `base`.
pub fn ablation_config(name: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    match name {
        "full" => cfg.variant = Variant::Apcgnn,
        "no_blending" => {
            cfg.variant = Variant::Apcgnn;
            cfg.confidence_clamp = Some(1.0);
        }
        "no_consistency" => {
            cfg.variant = Variant::Apcgnn;
            cfg.lambda = 0.0;
        }
        "vanilla_gcn" => {
            cfg.variant = Variant::VanillaGcn;
            cfg.lambda = 0.0;
        }
        "mlp" => {
            cfg.variant = Variant::Mlp;
            cfg.lambda = 0.0;
        }
        other => return Err(Error::Invalid(format!("unknown ablation {other:?}"))),
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub weights_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config: TrainConfig,
    pub cells: Vec<AblationCell>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub mean_macro_f1: Option<f64>,
    pub std_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Population mean and standard deviation, `None` for an empty slice.
fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// One training run per (configuration, seed), in parallel. A failing cell
/// records its error instead of aborting the table.
pub fn run_ablations(table: &RawTable, base: &TrainConfig, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one seed".into()));
    }
    let configs = ABLATION_NAMES
        .iter()
        .map(|n| ablation_config(n, base))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let cells: Vec<(usize, AblationCell)> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = TrainConfig {
                seed,
                ..configs[c].clone()
            };
            let cell = match train_table(table, &cfg, |_| {}) {
                Ok(out) => AblationCell {
                    seed,
                    accuracy: Some(out.report.accuracy),
                    macro_f1: Some(out.report.macro_f1),
                    weights_hash: Some(out.model.weights_hash()),
                    error: None,
                },
                Err(e) => AblationCell {
                    seed,
                    accuracy: None,
                    macro_f1: None,
                    weights_hash: None,
                    error: Some(e.to_string()),
                },
            };
            (c, cell)
        })
        .collect();

    let rows = configs
        .into_iter()
        .enumerate()
        .map(|(c, config)| {
            let cells: Vec<AblationCell> = cells
                .iter()
                .filter(|(i, _)| *i == c)
                .map(|(_, cell)| cell.clone())
                .collect();
            let acc: Vec<f64> = cells.iter().filter_map(|x| x.accuracy).collect();
            let f1: Vec<f64> = cells.iter().filter_map(|x| x.macro_f1).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
            AblationRow {
                name: ABLATION_NAMES[c].to_string(),
                config,
                cells,
                mean_accuracy,
                std_accuracy,
                mean_macro_f1,
                std_macro_f1,
            }
        })
        .collect();
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
    })
}
