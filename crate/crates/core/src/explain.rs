//! Single-patient inference on a local mini-graph and neighbour attribution.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{build_mini_graph, GraphExport, MiniGraph};
use crate::model::{argmax, ForwardTrace};
use crate::trainer::{run_forward, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelianceBucket {
    SelfDominant,
    Intermediate,
    GraphDependent,
}

/// `c < 0.3` relies on the patient's own features, `c > 0.7` on neighbours.
pub fn bucket(c: f64) -> RelianceBucket {
    if c < 0.3 {
        RelianceBucket::SelfDominant
    } else if c > 0.7 {
        RelianceBucket::GraphDependent
    } else {
        RelianceBucket::Intermediate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborExplanation {
    /// Row index into the model's training matrix.
    pub train_row: usize,
    /// 1-based position by descending similarity.
    pub rank: usize,
    pub similarity: f64,
    /// Weight and attention of the edge into the new patient; `None` when this
    /// neighbour is in the mini-graph but not among the patient's in-neighbours.
    pub edge_weight: Option<f64>,
    pub attention: Option<f64>,
    pub contribution: f64,
    pub label: usize,
    pub label_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniGraphView {
    /// Local node `l >= 1` is training row `train_rows[l - 1]`.
    pub train_rows: Vec<usize>,
    pub graph: GraphExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub predicted_class: usize,
    pub predicted_label: String,
    pub probabilities: Vec<f64>,
    /// Learned confidence of the new patient; absent for variants without one.
    pub confidence: Option<f64>,
    pub reliance_bucket: Option<RelianceBucket>,
    pub neighbors: Vec<NeighborExplanation>,
    pub mini_graph: MiniGraphView,
    pub model_id: String,
    pub timestamp: Option<String>,
}

/// Share of node 0's aggregated message owed to each of its in-edges:
/// `alpha * |w| * ||z_src||`, normalized to sum to 1 (uniform if all zero).
/// Returned in the order of `graph.in_edges(0)`.
pub fn neighbor_contributions(trace: &ForwardTrace, mini: &MiniGraph) -> Vec<f64> {
    let graph = &mini.graph;
    let in_edges = graph.in_edges(0);
    if in_edges.is_empty() {
        return Vec::new();
    }
    let raw: Vec<f64> = in_edges
        .iter()
        .map(|&e| {
            let edge = graph.edges()[e];
            let alpha = trace.alpha.as_ref().map_or(1.0, |a| a[e]);
            let weight = trace.edge_weights.get(e).copied().unwrap_or(edge.weight);
            let norm = trace
                .z
                .as_ref()
                .map_or(1.0, |z| z.row(edge.src).iter().map(|v| v * v).sum::<f64>().sqrt());
            alpha * weight.abs() * norm
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        raw.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Predicts one unseen patient from raw (possibly missing) feature values
/// without touching the model.
pub fn predict_new(x_raw: &[Option<f64>], model: &TrainedModel) -> Result<PredictionReport> {
    let d = model.feature_names.len();
    if x_raw.len() != d {
        return Err(Error::Shape(format!("patient has {} features, model expects {d}", x_raw.len())));
    }
    let filled = model.imputer.apply_row(x_raw)?;
    let z = model.standardizer.transform_row(&filled);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("standardized patient features".into()));
    }
    let cfg = &model.config;
    let mini = build_mini_graph(&z, &model.x_train, cfg.mini_graph_k, cfg.k_min, cfg.k_max)?;
    let (trace, used_graph) = run_forward(&mini.features, &mini.graph, &model.params, cfg)?;

    let probabilities = trace.probs.row(0).to_vec();
    let predicted_class = argmax(&probabilities);
    let confidence = trace.c.as_ref().map(|c| c[0]);

    let contributions = neighbor_contributions(&trace, &mini);
    let in_edges = mini.graph.in_edges(0);
    let mut neighbors: Vec<NeighborExplanation> = mini
        .train_rows
        .iter()
        .enumerate()
        .map(|(i, &row)| {
            let local = i + 1;
            let edge_pos = in_edges.iter().position(|&e| mini.graph.edges()[e].src == local);
            let label = model.y_train[row];
            NeighborExplanation {
                train_row: row,
                rank: local,
                similarity: mini.similarities[i],
                edge_weight: edge_pos.map(|p| used_graph.edges()[in_edges[p]].weight),
                attention: edge_pos.and_then(|p| trace.alpha.as_ref().map(|a| a[in_edges[p]])),
                contribution: edge_pos.map_or(0.0, |p| contributions[p]),
                label,
                label_name: model.class_names[label].clone(),
            }
        })
        .collect();
    neighbors.sort_by(|a, b| b.contribution.total_cmp(&a.contribution).then(a.rank.cmp(&b.rank)));

    Ok(PredictionReport {
        predicted_class,
        predicted_label: model.class_names[predicted_class].clone(),
        probabilities,
        confidence,
        reliance_bucket: confidence.map(bucket),
        neighbors,
        mini_graph: MiniGraphView {
            train_rows: mini.train_rows.clone(),
            graph: used_graph.export(),
        },
        model_id: model.model_id(),
        timestamp: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

/// Maps a feature object onto the model's feature order. Missing keys and
/// nulls become missing values.
pub fn parse_patient(body: &Value, feature_names: &[String]) -> Result<Vec<Option<f64>>, Vec<FieldError>> {
    let Some(obj) = body.as_object() else {
        return Err(vec![FieldError {
            field: String::new(),
            reason: "body must be a JSON object".into(),
        }]);
    };
    let mut errors: Vec<FieldError> = obj
        .keys()
        .filter(|k| !feature_names.contains(k))
        .map(|k| FieldError {
            field: k.clone(),
            reason: "unknown field".into(),
        })
        .collect();
    let mut row = Vec::with_capacity(feature_names.len());
    for name in feature_names {
        let value = match obj.get(name) {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => match n.as_f64() {
                Some(v) if v < 0.0 => {
                    errors.push(FieldError {
                        field: name.clone(),
                        reason: "negative measurement".into(),
                    });
                    None
                }
                Some(v) if v.is_finite() => Some(v),
                _ => {
                    errors.push(FieldError {
                        field: name.clone(),
                        reason: "not a finite number".into(),
                    });
                    None
                }
            },
            Some(_) => {
                errors.push(FieldError {
                    field: name.clone(),
                    reason: "expected a number or null".into(),
                });
                None
            }
        };
        row.push(value);
    }
    if errors.is_empty() {
        Ok(row)
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cohort, SyntheticConfig};
    use crate::graph::{Edge, PatientGraph};
    use crate::numerics::Matrix;
    use crate::trainer::{train, TrainConfig};

    fn model(n: usize) -> TrainedModel {
        let cohort = generate_synthetic_cohort(n, 7, &SyntheticConfig::default()).unwrap();
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 30,
            ..TrainConfig::default()
        };
        train(&cohort, &cfg).unwrap().model
    }

    fn raw_row(model: &TrainedModel, r: usize) -> Vec<Option<f64>> {
        model
            .x_train
            .row(r)
            .iter()
            .zip(model.standardizer.mean.iter().zip(&model.standardizer.std))
            .map(|(z, (m, s))| Some(z * s + m))
            .collect()
    }

    #[test]
    fn bucket_thresholds_are_strict() {
        assert_eq!(bucket(0.29), RelianceBucket::SelfDominant);
        assert_eq!(bucket(0.3), RelianceBucket::Intermediate);
        assert_eq!(bucket(0.70), RelianceBucket::Intermediate);
        assert_eq!(bucket(0.71), RelianceBucket::GraphDependent);
    }

    fn star(n_neighbors: usize, z: Matrix, alpha: Vec<f64>, w: f64) -> (ForwardTrace, MiniGraph) {
        let edges: Vec<Edge> = (1..=n_neighbors).map(|s| Edge { src: s, dst: 0, weight: w }).collect();
        let graph = PatientGraph::from_edges(n_neighbors + 1, edges).unwrap();
        let trace = ForwardTrace {
            z: Some(z),
            alpha: Some(alpha),
            edge_weights: graph.weights(),
            h_msg: None,
            x_proj: None,
            c: None,
            h_final: None,
            logits: Matrix::zeros(n_neighbors + 1, 3),
            probs: Matrix::filled(n_neighbors + 1, 3, 1.0 / 3.0),
        };
        let mini = MiniGraph {
            graph,
            train_rows: (0..n_neighbors).collect(),
            similarities: vec![w; n_neighbors],
            features: Matrix::zeros(n_neighbors + 1, 2),
        };
        (trace, mini)
    }

    #[test]
    fn contribution_normalization() {
        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let (t, m) = star(1, z, vec![0.3], 0.8);
        assert_eq!(neighbor_contributions(&t, &m), vec![1.0]);

        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let (t, m) = star(2, z, vec![0.4, 0.4], 0.5);
        assert_eq!(neighbor_contributions(&t, &m), vec![0.5, 0.5]);

        let (t, m) = star(2, Matrix::zeros(3, 2), vec![0.4, 0.4], 0.5);
        assert_eq!(neighbor_contributions(&t, &m), vec![0.5, 0.5]);
    }

    #[test]
    fn duplicate_training_row_is_top_neighbor() {
        let m = model(150);
        let r = 5;
        let rep = predict_new(&raw_row(&m, r), &m).unwrap();
        assert_eq!(rep.mini_graph.train_rows[0], r);
        let top = rep.neighbors.iter().find(|n| n.rank == 1).unwrap();
        assert_eq!(top.train_row, r);
        assert!((top.similarity - 1.0).abs() < 1e-12);
        assert!(rep.neighbors.len() <= 10);
        let s: f64 = rep.probabilities.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(rep.predicted_class, argmax(&rep.probabilities));
        let c: f64 = rep.neighbors.iter().map(|n| n.contribution).sum();
        assert!((c - 1.0).abs() < 1e-9);
        assert!(rep.neighbors.windows(2).all(|w| w[0].contribution >= w[1].contribution));
    }

    #[test]
    fn deterministic_and_non_mutating() {
        let m = model(120);
        let before = m.weights_hash();
        let row = vec![Some(40.0), None, Some(150.0), Some(7.0), None, Some(80.0), Some(1.0)];
        let a = predict_new(&row, &m).unwrap();
        let b = predict_new(&row, &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.weights_hash(), before);
    }

    #[test]
    fn few_training_rows_clamp_neighbors() {
        let mut m = model(60);
        m.x_train = m.x_train.select_rows(&[0, 1, 2]);
        m.y_train.truncate(3);
        let rep = predict_new(&raw_row(&m, 0), &m).unwrap();
        assert!(rep.neighbors.len() <= 3);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let m = model(60);
        assert!(predict_new(&[Some(1.0); 3], &m).is_err());
    }
}
