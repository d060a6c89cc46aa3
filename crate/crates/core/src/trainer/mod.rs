//! Full-batch transductive training, evaluation and ablations.
//!
//! The graph spans training and held-out patients together; cross-entropy
//! only sees the training rows. Evaluating a saved model rebuilds the same
//! graph from its stored training matrix plus the rows being evaluated.

mod ablation;
mod metrics;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{stratified_split, Cohort, FeatureSpec, Imputer, RawTable, Schema, SplitIndices, Standardizer, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::{build_adaptive_knn_graph, PatientGraph};
use crate::model::{
    forward, loss_and_gradients, Aggregation, ConsistencyTarget, ForwardOptions, ForwardTrace,
    LossBreakdown, ModelParams, Variant,
};
use crate::numerics::{AdamState, Matrix, Rng};

pub use ablation::{ablation_config, run_ablations, AblationCell, AblationReport, AblationRow, ABLATION_NAMES};
pub use metrics::{
    auc, explainability_stats, roc_curve, BucketCounts, ClassMetrics, ConfusionMatrix, EvalReport,
    RocPoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub mini_graph_k: usize,
    pub seed: u64,
    pub variant: Variant,
    pub confidence_edge_modulation: bool,
    pub test_fraction: f64,
    pub consistency_on: ConsistencyTarget,
    pub aggregation: Aggregation,
    /// Fixes every confidence to this value instead of learning it.
    pub confidence_clamp: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 150,
            lambda: 0.1,
            k_min: 3,
            k_max: 10,
            mini_graph_k: 10,
            seed: 7,
            variant: Variant::Apcgnn,
            confidence_edge_modulation: false,
            test_fraction: 0.2,
            consistency_on: ConsistencyTarget::H,
            aggregation: Aggregation::Sum,
            confidence_clamp: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.hidden == 0 || self.epochs == 0 || self.mini_graph_k == 0 {
            return bad("hidden, epochs and mini_graph_k must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if self.k_min == 0 || self.k_max < self.k_min {
            return bad(format!("k bounds {}..{} invalid", self.k_min, self.k_max));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test fraction {} outside (0, 1)", self.test_fraction));
        }
        if let Some(c) = self.confidence_clamp {
            if !(0.0..=1.0).contains(&c) {
                return bad(format!("confidence clamp {c} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            variant: self.variant,
            confidence_clamp: self.confidence_clamp,
            aggregation: self.aggregation,
        }
    }
}

/// Everything needed to predict: weights, preprocessing and the standardized
/// training matrix used to build graphs at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub imputer: Imputer,
    pub standardizer: Standardizer,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub x_train: Matrix,
    pub y_train: Vec<usize>,
    pub loss_curve: Vec<LossBreakdown>,
    /// Raw held-out rows from training, kept so reports can be recomputed.
    pub holdout: Option<RawTable>,
    pub report: Option<EvalReport>,
}

impl TrainedModel {
    /// SHA-256 over the serialized weights, as lowercase hex.
    pub fn weights_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("matrices serialize");
        hex::encode(Sha256::digest(bytes))
    }

    /// Short identifier derived from the weights.
    pub fn model_id(&self) -> String {
        self.weights_hash()[..12].to_string()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            features: self
                .feature_names
                .iter()
                .map(|n| FeatureSpec {
                    name: n.clone(),
                    categorical: false,
                })
                .collect(),
            label_column: "label".into(),
            class_names: self.class_names.clone(),
        }
    }

    /// Forward pass over training rows stacked with `x_eval` (both standardized).
    pub fn transductive_trace(&self, x_eval: &Matrix) -> Result<(ForwardTrace, PatientGraph)> {
        let x = self.x_train.vstack(x_eval)?;
        let graph = build_adaptive_knn_graph(&x, self.config.k_min, self.config.k_max)?;
        run_forward(&x, &graph, &self.params, &self.config)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub split: SplitIndices,
    pub report: EvalReport,
}

/// Progress callback argument, one per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochProgress {
    pub epoch: usize,
    pub epochs: usize,
    pub loss: LossBreakdown,
}

/// Forward pass, with the two-pass confidence modulation when enabled.
pub fn run_forward(
    x: &Matrix,
    graph: &PatientGraph,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(ForwardTrace, PatientGraph)> {
    let opts = config.forward_options();
    let trace = forward(x, graph, params, &opts)?;
    match (&trace.c, config.confidence_edge_modulation) {
        (Some(c), true) => {
            let modulated = graph.modulate_edges(c)?;
            Ok((forward(x, &modulated, params, &opts)?, modulated))
        }
        _ => Ok((trace, graph.clone())),
    }
}

fn graph_for_step(
    x: &Matrix,
    graph: &PatientGraph,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<PatientGraph> {
    if !config.confidence_edge_modulation || config.variant != Variant::Apcgnn {
        return Ok(graph.clone());
    }
    let trace = forward(x, graph, params, &config.forward_options())?;
    match trace.c {
        Some(c) => graph.modulate_edges(&c),
        None => Ok(graph.clone()),
    }
}

fn schema_of(cohort: &Cohort) -> Schema {
    Schema {
        features: cohort
            .feature_names
            .iter()
            .map(|n| FeatureSpec {
                name: n.clone(),
                categorical: false,
            })
            .collect(),
        label_column: "label".into(),
        class_names: cohort.class_names.clone(),
    }
}

pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<TrainOutcome> {
    train_table(&cohort.to_raw(&schema_of(cohort)), config, |_| {})
}

/// Split, impute, standardize, build the graph over every row, and run
/// `epochs` full-batch Adam steps. `progress` is called after each epoch.
pub fn train_table(
    table: &RawTable,
    config: &TrainConfig,
    mut progress: impl FnMut(EpochProgress),
) -> Result<TrainOutcome> {
    config.validate()?;
    if table.schema.class_names.len() != NUM_CLASSES {
        return Err(Error::Invalid(format!(
            "expected {NUM_CLASSES} classes, schema has {}",
            table.schema.class_names.len()
        )));
    }
    let split = stratified_split(&table.labels, NUM_CLASSES, config.test_fraction, config.seed)?;
    let imputer = Imputer::fit(table, &split.train)?;
    let complete = imputer.apply(table)?;
    let standardizer = Standardizer::fit(&complete.features, &split.train)?;
    let z = standardizer.transform(&complete.features)?;

    let x_train = z.select_rows(&split.train);
    let x_test = z.select_rows(&split.test);
    let y_train: Vec<usize> = split.train.iter().map(|&r| table.labels[r]).collect();
    let x = x_train.vstack(&x_test)?;
    let mut labels = y_train.clone();
    labels.extend(split.test.iter().map(|&r| table.labels[r]));
    let train_rows: Vec<usize> = (0..x_train.rows()).collect();

    let graph = build_adaptive_knn_graph(&x, config.k_min, config.k_max)?;
    let mut rng = Rng::seed(config.seed);
    let mut params = ModelParams::init(x.cols(), config.hidden, NUM_CLASSES, &mut rng);
    let mut adam = AdamState::new(params.tensors());
    let opts = config.forward_options();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let step_graph = graph_for_step(&x, &graph, &params, config)?;
        let (loss, grads) = loss_and_gradients(
            &params,
            &x,
            &step_graph,
            &labels,
            &train_rows,
            config.lambda,
            config.consistency_on,
            &opts,
        )?;
        if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: loss.total,
            });
        }
        adam.step(&mut params.tensors_mut(), &grads, config.lr, config.weight_decay)?;
        if params.tensors().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: loss.total,
            });
        }
        loss_curve.push(loss);
        progress(EpochProgress {
            epoch: epoch + 1,
            epochs: config.epochs,
            loss,
        });
        tracing::debug!(epoch, loss = loss.total, "epoch done");
    }

    let holdout = table.subset(&split.test);
    let mut model = TrainedModel {
        params,
        imputer,
        standardizer,
        config: config.clone(),
        feature_names: table.schema.feature_names(),
        class_names: table.schema.class_names.clone(),
        x_train,
        y_train,
        loss_curve,
        holdout: None,
        report: None,
    };
    let report = evaluate(&model, &holdout)?;
    model.holdout = Some(holdout);
    model.report = Some(report.clone());
    Ok(TrainOutcome {
        model,
        split,
        report,
    })
}

/// Metrics on `rows`, placed in a graph alongside the model's training rows.
pub fn evaluate(model: &TrainedModel, rows: &RawTable) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Invalid("no rows to evaluate".into()));
    }
    let complete = model.imputer.apply(rows)?;
    let x_eval = model.standardizer.transform(&complete.features)?;
    let (trace, _) = model.transductive_trace(&x_eval)?;
    let offset = model.x_train.rows();
    let eval_rows: Vec<usize> = (offset..offset + rows.len()).collect();
    let probs = trace.probs.select_rows(&eval_rows);
    let confidences = trace.c.as_ref().map(|c| c[offset..].to_vec());
    EvalReport::from_probabilities(&rows.labels, &probs, &model.class_names, confidences.as_deref())
}
