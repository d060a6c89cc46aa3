//! Reverse-mode differentiation over a flat record of dense primitives.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the record in reverse and accumulates adjoints, so a value that
//! feeds several consumers receives the sum of their contributions.

use std::sync::Arc;

use super::matrix::softmax_in_place;
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `n x m` times an `n x 1` column, broadcast across columns.
    MulCol(Var, Var),
    /// `n x m` plus a `1 x m` row, broadcast across rows.
    AddRow(Var, Var),
    /// `scale * a + shift`; only the scale matters for the adjoint.
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Arc<[usize]>,
        rows: Arc<[usize]>,
    },
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: {}x{} with {}x{}", a.0, a.1, b.0, b.1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(shape_err("mul_col", va.shape(), vc.shape()));
        }
        let m = va.cols();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * vc.data()[i / m.max(1)])
            .collect();
        let out = Matrix::from_raw(va.rows(), m, data);
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", va.shape(), vr.shape()));
        }
        let m = va.cols();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vr.data()[i % m])
            .collect();
        let out = Matrix::from_raw(va.rows(), m, data);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.data().len().max(1) as f64;
        let out = Matrix::from_raw(1, 1, vec![v.sum() / n]);
        self.push(out, Op::Mean(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::from_raw(1, 1, vec![self.value(a).squared_norm()]);
        self.push(out, Op::SumSquares(a))
    }

    /// Mean cross-entropy of row-softmax(`logits`) over the listed rows.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        rows: &[usize],
    ) -> Result<Var> {
        let v = self.value(logits);
        if targets.len() != v.rows() {
            return Err(Error::Contract(format!(
                "{} targets for {} logit rows",
                targets.len(),
                v.rows()
            )));
        }
        if rows.is_empty() {
            return Err(Error::Contract("cross-entropy over zero rows".into()));
        }
        let mut total = 0.0;
        for &r in rows {
            if r >= v.rows() || targets[r] >= v.cols() {
                return Err(Error::Contract(format!("row {r} or its target out of range")));
            }
            let t = targets[r];
            let row = v.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let out = Matrix::from_raw(1, 1, vec![total / rows.len() as f64]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.into(),
                rows: rows.into(),
            },
        ))
    }

    /// Output row `e` is input row `indices[e]`.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::Contract(format!("gather row {bad} of {}", v.rows())));
        }
        let out = v.select_rows(&indices);
        Ok(self.push(out, Op::GatherRows(a, indices)))
    }

    /// Output row `targets[e]` accumulates input row `e`; output has `out_rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        targets: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Var> {
        let v = self.value(a);
        if targets.len() != v.rows() {
            return Err(Error::Contract(format!(
                "{} scatter targets for {} rows",
                targets.len(),
                v.rows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= out_rows) {
            return Err(Error::Contract(format!("scatter target {bad} of {out_rows}")));
        }
        let m = v.cols();
        let mut out = Matrix::zeros(out_rows, m);
        for (e, &t) in targets.iter().enumerate() {
            let src = v.row(e);
            let dst = &mut out.data_mut()[t * m..(t + 1) * m];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, targets)))
    }

    /// Adjoints of the 1x1 `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!("backward from a {r}x{c} value")));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    accumulate(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::MulCol(a, c) => {
                    let (va, vc) = (self.value(*a), self.value(*c));
                    let m = va.cols();
                    let mut ga = g.clone();
                    let mut gc = Matrix::zeros(vc.rows(), 1);
                    for r in 0..va.rows() {
                        let scale = vc.data()[r];
                        let mut acc = 0.0;
                        for k in 0..m {
                            let gi = g.data()[r * m + k];
                            ga.data_mut()[r * m + k] = gi * scale;
                            acc += gi * va.data()[r * m + k];
                        }
                        gc.data_mut()[r] = acc;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *c, gc);
                }
                Op::AddRow(a, row) => {
                    let m = g.cols();
                    let mut gr = Matrix::zeros(1, m);
                    for (i, x) in g.data().iter().enumerate() {
                        gr.data_mut()[i % m] += x;
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, gr);
                }
                Op::Affine(a, scale) => {
                    accumulate(&mut grads, *a, g.map(|x| x * scale));
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0] / n));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.data()[0];
                    accumulate(&mut grads, *a, self.value(*a).map(|x| s * x));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    rows,
                } => {
                    let v = self.value(*logits);
                    let m = v.cols();
                    let scale = g.data()[0] / rows.len() as f64;
                    let mut gl = Matrix::zeros(v.rows(), m);
                    for &r in rows.iter() {
                        let mut p = v.row(r).to_vec();
                        softmax_in_place(&mut p);
                        p[targets[r]] -= 1.0;
                        let dst = &mut gl.data_mut()[r * m..(r + 1) * m];
                        for (d, pi) in dst.iter_mut().zip(&p) {
                            *d += scale * pi;
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::GatherRows(a, indices) => {
                    let va = self.value(*a);
                    let m = va.cols();
                    let mut ga = Matrix::zeros(va.rows(), m);
                    for (e, &i) in indices.iter().enumerate() {
                        let src = g.row(e);
                        let dst = &mut ga.data_mut()[i * m..(i + 1) * m];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, targets) => {
                    accumulate(&mut grads, *a, g.select_rows(targets));
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; exactly zero when `v` did
    /// not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}
