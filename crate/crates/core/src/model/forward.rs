use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamVars};
use crate::error::{Error, Result};
use crate::graph::PatientGraph;
use crate::numerics::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Apcgnn,
    VanillaGcn,
    Mlp,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "apcgnn" => Ok(Variant::Apcgnn),
            "vanilla_gcn" => Ok(Variant::VanillaGcn),
            "mlp" => Ok(Variant::Mlp),
            other => Err(Error::Invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Neighbour aggregation for the vanilla GCN variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// Which embedding the neighbourhood consistency term smooths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyTarget {
    #[default]
    H,
    HFinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub variant: Variant,
    /// Replaces the learned confidence with a constant in `[0, 1]`.
    pub confidence_clamp: Option<f64>,
    pub aggregation: Aggregation,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Apcgnn,
            confidence_clamp: None,
            aggregation: Aggregation::Sum,
        }
    }
}

/// Intermediate values of one forward pass. Fields a variant does not
/// compute are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Neighbour-transformed features `X W`; also the attention context.
    pub z: Option<Matrix>,
    /// Per-edge attention, aligned with the graph's edge list.
    pub alpha: Option<Vec<f64>>,
    /// Edge weights the pass used (after any confidence modulation).
    pub edge_weights: Vec<f64>,
    pub h_msg: Option<Matrix>,
    pub x_proj: Option<Matrix>,
    pub c: Option<Vec<f64>>,
    pub h_final: Option<Matrix>,
    pub logits: Matrix,
    pub probs: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub consistency: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ForwardVars {
    pub z: Option<Var>,
    pub alpha: Option<Var>,
    pub h: Option<Var>,
    pub x_proj: Option<Var>,
    pub c: Option<Var>,
    pub h_final: Option<Var>,
    pub logits: Var,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LossVars {
    pub total: Var,
    pub cross_entropy: Var,
    pub consistency: Var,
}

fn column_leaf(tape: &mut Tape, values: Vec<f64>) -> Var {
    let n = values.len();
    tape.leaf(Matrix::from_raw(n, 1, values))
}

/// `sigmoid(relu([z_i || z_j] A1 + b1) a2 + b2)` for every edge `j -> i`.
pub(crate) fn attention_on_tape(
    tape: &mut Tape,
    p: &ParamVars,
    z: Var,
    graph: &PatientGraph,
) -> Result<Var> {
    let toward_dst = tape.matmul(z, p.attn_dst)?;
    let toward_src = tape.matmul(z, p.attn_src)?;
    let at_dst = tape.gather_rows(toward_dst, graph.dst_indices())?;
    let at_src = tape.gather_rows(toward_src, graph.src_indices())?;
    let pre = tape.add(at_dst, at_src)?;
    let pre = tape.add_row(pre, p.attn_b1)?;
    let hidden = tape.relu(pre);
    let score = tape.matmul(hidden, p.attn_w2)?;
    let score = tape.add_row(score, p.attn_b2)?;
    Ok(tape.sigmoid(score))
}

/// `relu(sum_j coef_ij * (X W)_j)` aggregated onto destinations.
pub(crate) fn edge_conv_on_tape(
    tape: &mut Tape,
    xw: Var,
    coef: Var,
    graph: &PatientGraph,
) -> Result<Var> {
    let from_src = tape.gather_rows(xw, graph.src_indices())?;
    let messages = tape.mul_col(from_src, coef)?;
    let agg = tape.scatter_add_rows(messages, graph.dst_indices(), graph.node_count())?;
    Ok(tape.relu(agg))
}

pub(crate) fn confidence_on_tape(tape: &mut Tape, p: &ParamVars, h: Var) -> Result<Var> {
    let hidden = tape.matmul(h, p.conf_w1)?;
    let hidden = tape.add_row(hidden, p.conf_b1)?;
    let hidden = tape.relu(hidden);
    let score = tape.matmul(hidden, p.conf_w2)?;
    let score = tape.add_row(score, p.conf_b2)?;
    Ok(tape.sigmoid(score))
}

/// `c * h + (1 - c) * x_proj`, row-wise.
pub(crate) fn blend_on_tape(tape: &mut Tape, h: Var, x_proj: Var, c: Var) -> Result<Var> {
    let keep = tape.affine(c, -1.0, 1.0);
    let graph_part = tape.mul_col(h, c)?;
    let self_part = tape.mul_col(x_proj, keep)?;
    tape.add(graph_part, self_part)
}

pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    p: &ParamVars,
    x: Var,
    graph: &PatientGraph,
    opts: &ForwardOptions,
) -> Result<ForwardVars> {
    let n = tape.value(x).rows();
    if opts.variant != Variant::Mlp && graph.node_count() != n {
        return Err(Error::Shape(format!(
            "graph has {} nodes, features {} rows",
            graph.node_count(),
            n
        )));
    }
    let head = |tape: &mut Tape, rep: Var| -> Result<Var> {
        let logits = tape.matmul(rep, p.head_w)?;
        tape.add_row(logits, p.head_b)
    };

    match opts.variant {
        Variant::Apcgnn => {
            let xw = tape.matmul(x, p.message)?;
            let alpha = attention_on_tape(tape, p, xw, graph)?;
            let w = column_leaf(tape, graph.weights());
            let coef = tape.mul(alpha, w)?;
            let h = edge_conv_on_tape(tape, xw, coef, graph)?;
            let x_proj = tape.matmul(x, p.projection)?;
            let c = match opts.confidence_clamp {
                Some(v) => column_leaf(tape, vec![v; n]),
                None => confidence_on_tape(tape, p, h)?,
            };
            let h_final = blend_on_tape(tape, h, x_proj, c)?;
            let logits = head(tape, h_final)?;
            Ok(ForwardVars {
                z: Some(xw),
                alpha: Some(alpha),
                h: Some(h),
                x_proj: Some(x_proj),
                c: Some(c),
                h_final: Some(h_final),
                logits,
            })
        }
        Variant::VanillaGcn => {
            let xw = tape.matmul(x, p.message)?;
            let mut coef = graph.weights();
            if opts.aggregation == Aggregation::Mean {
                for (c, e) in coef.iter_mut().zip(graph.edges()) {
                    *c /= graph.in_degree(e.dst) as f64;
                }
            }
            let coef = column_leaf(tape, coef);
            let h = edge_conv_on_tape(tape, xw, coef, graph)?;
            let logits = head(tape, h)?;
            Ok(ForwardVars {
                z: Some(xw),
                alpha: None,
                h: Some(h),
                x_proj: None,
                c: None,
                h_final: None,
                logits,
            })
        }
        Variant::Mlp => {
            let x_proj = tape.matmul(x, p.projection)?;
            let hidden = tape.relu(x_proj);
            let logits = head(tape, hidden)?;
            Ok(ForwardVars {
                z: None,
                alpha: None,
                h: None,
                x_proj: Some(x_proj),
                c: None,
                h_final: None,
                logits,
            })
        }
    }
}

/// Mean over edges of `||emb_i - emb_j||^2`.
pub(crate) fn consistency_on_tape(tape: &mut Tape, emb: Var, graph: &PatientGraph) -> Result<Var> {
    if graph.edge_count() == 0 {
        tracing::warn!("consistency term over an empty edge set is zero");
        return Ok(tape.leaf(Matrix::zeros(1, 1)));
    }
    let at_dst = tape.gather_rows(emb, graph.dst_indices())?;
    let at_src = tape.gather_rows(emb, graph.src_indices())?;
    let diff = tape.sub(at_dst, at_src)?;
    let total = tape.sum_squares(diff);
    Ok(tape.affine(total, 1.0 / graph.edge_count() as f64, 0.0))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_on_tape(
    tape: &mut Tape,
    fv: &ForwardVars,
    labels: &[usize],
    train_rows: &[usize],
    graph: &PatientGraph,
    lambda: f64,
    target: ConsistencyTarget,
) -> Result<LossVars> {
    let cross_entropy = tape.softmax_cross_entropy(fv.logits, labels, train_rows)?;
    let emb = match target {
        ConsistencyTarget::H => fv.h,
        ConsistencyTarget::HFinal => fv.h_final.or(fv.h),
    };
    let consistency = match emb {
        Some(e) => consistency_on_tape(tape, e, graph)?,
        None => tape.leaf(Matrix::zeros(1, 1)),
    };
    let weighted = tape.affine(consistency, lambda, 0.0);
    let total = tape.add(cross_entropy, weighted)?;
    Ok(LossVars {
        total,
        cross_entropy,
        consistency,
    })
}

fn column_values(tape: &Tape, v: Option<Var>) -> Option<Vec<f64>> {
    v.map(|v| tape.value(v).data().to_vec())
}

pub(crate) fn trace_from_tape(tape: &Tape, fv: &ForwardVars, graph: &PatientGraph) -> ForwardTrace {
    let logits = tape.value(fv.logits).clone();
    ForwardTrace {
        z: fv.z.map(|v| tape.value(v).clone()),
        alpha: column_values(tape, fv.alpha),
        edge_weights: graph.weights(),
        h_msg: fv.h.map(|v| tape.value(v).clone()),
        x_proj: fv.x_proj.map(|v| tape.value(v).clone()),
        c: column_values(tape, fv.c),
        h_final: fv.h_final.map(|v| tape.value(v).clone()),
        probs: logits.softmax_rows(),
        logits,
    }
}

fn check_features(x: &Matrix, params: &ModelParams) -> Result<()> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// One forward pass over `graph`.
pub fn forward(
    x: &Matrix,
    graph: &PatientGraph,
    params: &ModelParams,
    opts: &ForwardOptions,
) -> Result<ForwardTrace> {
    check_features(x, params)?;
    if let Some(c) = opts.confidence_clamp {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Invalid(format!("confidence clamp {c} outside [0, 1]")));
        }
    }
    let mut tape = Tape::new();
    let p = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let fv = forward_on_tape(&mut tape, &p, xv, graph, opts)?;
    Ok(trace_from_tape(&tape, &fv, graph))
}

/// Loss and its gradient for every tensor, in [`super::PARAM_NAMES`] order.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients(
    params: &ModelParams,
    x: &Matrix,
    graph: &PatientGraph,
    labels: &[usize],
    train_rows: &[usize],
    lambda: f64,
    target: ConsistencyTarget,
    opts: &ForwardOptions,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    check_features(x, params)?;
    let mut tape = Tape::new();
    let p = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let fv = forward_on_tape(&mut tape, &p, xv, graph, opts)?;
    let lv = loss_on_tape(&mut tape, &fv, labels, train_rows, graph, lambda, target)?;
    let breakdown = LossBreakdown {
        total: tape.scalar(lv.total),
        cross_entropy: tape.scalar(lv.cross_entropy),
        consistency: tape.scalar(lv.consistency),
        lambda,
    };
    let grads = tape.backward(lv.total)?;
    Ok((breakdown, p.gradients(&grads)))
}

/// Per-edge attention with `z` as the node context.
pub fn attention_scores(z: &Matrix, graph: &PatientGraph, params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = params.register(&mut tape);
    let zv = tape.leaf(z.clone());
    let alpha = attention_on_tape(&mut tape, &p, zv, graph)?;
    Ok(tape.value(alpha).data().to_vec())
}

/// Attention- and similarity-weighted neighbour aggregation through `params.message`.
pub fn edge_conv(
    x: &Matrix,
    graph: &PatientGraph,
    alpha: &[f64],
    params: &ModelParams,
) -> Result<Matrix> {
    check_features(x, params)?;
    if alpha.len() != graph.edge_count() {
        return Err(Error::Contract(format!(
            "{} attention values for {} edges",
            alpha.len(),
            graph.edge_count()
        )));
    }
    let coef: Vec<f64> = alpha.iter().zip(graph.edges()).map(|(a, e)| a * e.weight).collect();
    let mut tape = Tape::new();
    let p = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let xw = tape.matmul(xv, p.message)?;
    let coef = column_leaf(&mut tape, coef);
    let h = edge_conv_on_tape(&mut tape, xw, coef, graph)?;
    Ok(tape.value(h).clone())
}

pub fn project(x: &Matrix, params: &ModelParams) -> Result<Matrix> {
    check_features(x, params)?;
    x.matmul(&params.projection)
}

pub fn confidence(h: &Matrix, params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = params.register(&mut tape);
    let hv = tape.leaf(h.clone());
    let c = confidence_on_tape(&mut tape, &p, hv)?;
    Ok(tape.value(c).data().to_vec())
}

pub fn blend(h: &Matrix, x_proj: &Matrix, c: &[f64]) -> Result<Matrix> {
    if h.shape() != x_proj.shape() || c.len() != h.rows() {
        return Err(Error::Shape(format!(
            "blend of {:?} and {:?} with {} confidences",
            h.shape(),
            x_proj.shape(),
            c.len()
        )));
    }
    if let Some(bad) = c.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("confidence {bad} outside [0, 1]")));
    }
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let xv = tape.leaf(x_proj.clone());
    let cv = column_leaf(&mut tape, c.to_vec());
    let out = blend_on_tape(&mut tape, hv, xv, cv)?;
    Ok(tape.value(out).clone())
}

pub fn consistency_loss(h: &Matrix, graph: &PatientGraph) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let l = consistency_on_tape(&mut tape, hv, graph)?;
    Ok(tape.scalar(l))
}

/// Loss of an already computed pass: cross-entropy over `train_rows`,
/// consistency over every edge.
pub fn total_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    train_rows: &[usize],
    graph: &PatientGraph,
    lambda: f64,
    target: ConsistencyTarget,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let logits = tape.leaf(trace.logits.clone());
    let h = trace.h_msg.as_ref().map(|m| tape.leaf(m.clone()));
    let h_final = trace.h_final.as_ref().map(|m| tape.leaf(m.clone()));
    let fv = ForwardVars {
        z: None,
        alpha: None,
        h,
        x_proj: None,
        c: None,
        h_final,
        logits,
    };
    let lv = loss_on_tape(&mut tape, &fv, labels, train_rows, graph, lambda, target)?;
    Ok(LossBreakdown {
        total: tape.scalar(lv.total),
        cross_entropy: tape.scalar(lv.cross_entropy),
        consistency: tape.scalar(lv.consistency),
        lambda,
    })
}

/// Argmax with ties going to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
