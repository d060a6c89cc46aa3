use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, Rng, Tape, Var};

/// Every learnable tensor of the model.
///
/// The attention MLP's first layer acts on `[z_i || z_j]`; it is stored as
/// its two `h x h` halves (`attn_dst` multiplies `z_i`, `attn_src` multiplies
/// `z_j`), which is the same linear map as one `2h x h` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `d x h` message transform applied to neighbour features.
    pub message: Matrix,
    /// `d x h` self-feature projection.
    pub projection: Matrix,
    pub attn_dst: Matrix,
    pub attn_src: Matrix,
    pub attn_b1: Matrix,
    pub attn_w2: Matrix,
    pub attn_b2: Matrix,
    pub conf_w1: Matrix,
    pub conf_b1: Matrix,
    pub conf_w2: Matrix,
    pub conf_b2: Matrix,
    /// `h x classes` classifier weights.
    pub head_w: Matrix,
    pub head_b: Matrix,
}

pub const PARAM_NAMES: [&str; 13] = [
    "message",
    "projection",
    "attn_dst",
    "attn_src",
    "attn_b1",
    "attn_w2",
    "attn_b2",
    "conf_w1",
    "conf_b1",
    "conf_w2",
    "conf_b2",
    "head_w",
    "head_b",
];

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, h: usize, classes: usize, rng: &mut Rng) -> Self {
        let message = rng.glorot(d, h);
        let projection = rng.glorot(d, h);
        let attn_w1 = rng.glorot(2 * h, h);
        Self {
            message,
            projection,
            attn_dst: attn_w1.select_rows(&(0..h).collect::<Vec<_>>()),
            attn_src: attn_w1.select_rows(&(h..2 * h).collect::<Vec<_>>()),
            attn_b1: Matrix::zeros(1, h),
            attn_w2: rng.glorot(h, 1),
            attn_b2: Matrix::zeros(1, 1),
            conf_w1: rng.glorot(h, h),
            conf_b1: Matrix::zeros(1, h),
            conf_w2: rng.glorot(h, 1),
            conf_b2: Matrix::zeros(1, 1),
            head_w: rng.glorot(h, classes),
            head_b: Matrix::zeros(1, classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.message.rows()
    }

    pub fn hidden(&self) -> usize {
        self.message.cols()
    }

    pub fn classes(&self) -> usize {
        self.head_w.cols()
    }

    pub fn tensors(&self) -> [&Matrix; 13] {
        [
            &self.message,
            &self.projection,
            &self.attn_dst,
            &self.attn_src,
            &self.attn_b1,
            &self.attn_w2,
            &self.attn_b2,
            &self.conf_w1,
            &self.conf_b1,
            &self.conf_w2,
            &self.conf_b2,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 13] {
        [
            &mut self.message,
            &mut self.projection,
            &mut self.attn_dst,
            &mut self.attn_src,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.attn_b2,
            &mut self.conf_w1,
            &mut self.conf_b1,
            &mut self.conf_w2,
            &mut self.conf_b2,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    /// Rebuilds from named tensors, checking shapes against `d`, `h`, `classes`.
    pub fn from_named(
        named: &[(String, Matrix)],
        d: usize,
        h: usize,
        classes: usize,
    ) -> Result<Self> {
        let expected = Self::shapes(d, h, classes);
        let mut found: Vec<Option<Matrix>> = vec![None; PARAM_NAMES.len()];
        for (name, m) in named {
            let i = PARAM_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Model(format!("unknown tensor {name:?}")))?;
            if m.shape() != expected[i] {
                return Err(Error::Model(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    m.shape(),
                    expected[i]
                )));
            }
            found[i] = Some(m.clone());
        }
        let mut it = found.into_iter().enumerate().map(|(i, m)| {
            m.ok_or_else(|| Error::Model(format!("missing tensor {}", PARAM_NAMES[i])))
        });
        let mut next = || it.next().expect("13 tensors");
        Ok(Self {
            message: next()?,
            projection: next()?,
            attn_dst: next()?,
            attn_src: next()?,
            attn_b1: next()?,
            attn_w2: next()?,
            attn_b2: next()?,
            conf_w1: next()?,
            conf_b1: next()?,
            conf_w2: next()?,
            conf_b2: next()?,
            head_w: next()?,
            head_b: next()?,
        })
    }

    pub fn shapes(d: usize, h: usize, classes: usize) -> [(usize, usize); 13] {
        [
            (d, h),
            (d, h),
            (h, h),
            (h, h),
            (1, h),
            (h, 1),
            (1, 1),
            (h, h),
            (1, h),
            (h, 1),
            (1, 1),
            (h, classes),
            (1, classes),
        ]
    }

    pub(crate) fn register(&self, tape: &mut Tape) -> ParamVars {
        let v = self.tensors().map(|m| tape.leaf(m.clone()));
        ParamVars {
            message: v[0],
            projection: v[1],
            attn_dst: v[2],
            attn_src: v[3],
            attn_b1: v[4],
            attn_w2: v[5],
            attn_b2: v[6],
            conf_w1: v[7],
            conf_b1: v[8],
            conf_w2: v[9],
            conf_b2: v[10],
            head_w: v[11],
            head_b: v[12],
        }
    }
}

/// Tape handles of a registered [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamVars {
    pub message: Var,
    pub projection: Var,
    pub attn_dst: Var,
    pub attn_src: Var,
    pub attn_b1: Var,
    pub attn_w2: Var,
    pub attn_b2: Var,
    pub conf_w1: Var,
    pub conf_b1: Var,
    pub conf_w2: Var,
    pub conf_b2: Var,
    pub head_w: Var,
    pub head_b: Var,
}

impl ParamVars {
    fn all(&self) -> [Var; 13] {
        [
            self.message,
            self.projection,
            self.attn_dst,
            self.attn_src,
            self.attn_b1,
            self.attn_w2,
            self.attn_b2,
            self.conf_w1,
            self.conf_b1,
            self.conf_w2,
            self.conf_b2,
            self.head_w,
            self.head_b,
        ]
    }

    /// Gradients in [`PARAM_NAMES`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.all().iter().map(|v| grads.wrt(*v)).collect()
    }
}
