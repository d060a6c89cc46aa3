//! Classification metrics computed from scratch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{bucket, RelianceBucket};
use crate::model::argmax;
use crate::numerics::Matrix;

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Invalid(format!(
                "{} labels for {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Invalid(format!("class index out of range: {t}/{p}")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn true_positives(&self, c: usize) -> usize {
        self.counts[c][c]
    }

    fn predicted(&self, c: usize) -> usize {
        self.counts.iter().map(|r| r[c]).sum()
    }

    fn actual(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct = (0..self.classes()).map(|c| self.true_positives(c)).sum();
        ratio(correct, self.total())
    }

    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.predicted(c))
    }

    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.true_positives(c), self.actual(c))
    }

    /// `2 tp / (2 tp + fp + fn)`, zero when the class never occurs.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.true_positives(c);
        let fp = self.predicted(c) - tp;
        let fnc = self.actual(c) - tp;
        ratio(2 * tp, 2 * tp + fp + fnc)
    }

    pub fn macro_f1(&self) -> f64 {
        (0..self.classes()).map(|c| self.f1(c)).sum::<f64>() / self.classes() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over distinct score thresholds, highest first. Tied scores move
/// the curve diagonally in one step. `None` if either side is empty.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<Vec<RocPoint>> {
    let pos = positive.iter().filter(|p| **p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Some(points)
}

/// Trapezoidal area under a ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub self_dominant: usize,
    pub graph_dependent: usize,
    pub intermediate: usize,
}

impl BucketCounts {
    pub fn total(&self) -> usize {
        self.self_dominant + self.graph_dependent + self.intermediate
    }
}

/// Counts confidences below 0.3, above 0.7, and in between.
pub fn explainability_stats(confidences: &[f64]) -> BucketCounts {
    let mut counts = BucketCounts::default();
    for &c in confidences {
        match bucket(c) {
            RelianceBucket::SelfDominant => counts.self_dominant += 1,
            RelianceBucket::GraphDependent => counts.graph_dependent += 1,
            RelianceBucket::Intermediate => counts.intermediate += 1,
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// One-vs-rest AUC; absent when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
    /// Present for variants that compute a confidence score.
    pub explainability: Option<BucketCounts>,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl EvalReport {
    pub fn from_probabilities(
        labels: &[usize],
        probs: &Matrix,
        class_names: &[String],
        confidences: Option<&[f64]>,
    ) -> Result<Self> {
        let classes = class_names.len();
        if probs.rows() != labels.len() || probs.cols() != classes {
            return Err(Error::Shape(format!(
                "{:?} probabilities for {} labels and {} classes",
                probs.shape(),
                labels.len(),
                classes
            )));
        }
        if labels.is_empty() {
            return Err(Error::Invalid("no rows to evaluate".into()));
        }
        let predictions: Vec<usize> = (0..probs.rows()).map(|r| argmax(probs.row(r))).collect();
        let confusion = ConfusionMatrix::from_predictions(labels, &predictions, classes)?;
        let per_class: Vec<ClassMetrics> = (0..classes)
            .map(|c| {
                let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
                let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
                ClassMetrics {
                    class_name: class_names[c].clone(),
                    precision: confusion.precision(c),
                    recall: confusion.recall(c),
                    f1: confusion.f1(c),
                    support: positive.iter().filter(|p| **p).count(),
                    auc: roc_curve(&scores, &positive).map(|p| auc(&p)),
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / classes as f64;
        let aucs: Vec<f64> = per_class.iter().filter_map(|m| m.auc).collect();
        Ok(Self {
            n: labels.len(),
            accuracy: confusion.accuracy(),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: confusion.macro_f1(),
            macro_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            per_class,
            confusion,
            explainability: confidences.map(explainability_stats),
            predictions,
            probabilities: (0..probs.rows()).map(|r| probs.row(r).to_vec()).collect(),
            labels: labels.to_vec(),
        })
    }

    /// One-vs-rest ROC per class, as `(class, curve)`.
    pub fn roc_curves(&self) -> Vec<(String, Option<Vec<RocPoint>>)> {
        self.per_class
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let scores: Vec<f64> = self.probabilities.iter().map(|p| p[c]).collect();
                let positive: Vec<bool> = self.labels.iter().map(|&l| l == c).collect();
                (m.class_name.clone(), roc_curve(&scores, &positive))
            })
            .collect()
    }

    /// `class,threshold,fpr,tpr` rows. The leading point uses threshold `inf`.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,threshold,fpr,tpr\n");
        for (name, curve) in self.roc_curves() {
            for p in curve.into_iter().flatten() {
                out.push_str(&format!("{name},{},{},{}\n", p.threshold, p.fpr, p.tpr));
            }
        }
        out
    }

    /// Confusion counts with a header of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let names: Vec<&str> = self.per_class.iter().map(|m| m.class_name.as_str()).collect();
        let mut out = format!("true\\predicted,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }

    /// Largest absolute difference over every scalar metric.
    pub fn max_metric_difference(&self, other: &EvalReport) -> f64 {
        let scalars = |r: &EvalReport| {
            let mut v = vec![r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1];
            v.push(r.macro_auc.unwrap_or(f64::NAN));
            for m in &r.per_class {
                v.extend([m.precision, m.recall, m.f1, m.auc.unwrap_or(f64::NAN)]);
            }
            v.extend(r.probabilities.iter().flatten());
            v
        };
        let (a, b) = (scalars(self), scalars(other));
        if a.len() != b.len()
            || self.confusion != other.confusion
            || self.predictions != other.predictions
            || self.explainability != other.explainability
        {
            return f64::INFINITY;
        }
        a.iter()
            .zip(&b)
            .map(|(x, y)| if x.is_nan() && y.is_nan() { 0.0 } else { (x - y).abs() })
            .fold(0.0, f64::max)
    }
}
