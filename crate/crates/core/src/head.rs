//! Equilibrium gate and token classifier.
//!
//! ```text
//! g   = sigmoid((h_tc + h_ctx) W + b)
//! out = g * h_tc + (1 - g) * h_ctx
//! p   = softmax(out W_cls + b_cls)
//! ```

use rand::Rng;

use crate::corpus::{AnnotatedSentence, CausalTag};
use crate::error::ModelError;
use crate::params::{xavier, Binder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, TensorError, Var};

pub const FUSE_P_TC: &str = "fuse.p_tc";
pub const FUSE_P_CTX: &str = "fuse.p_ctx";
pub const FUSE_W: &str = "fuse.w";
pub const FUSE_B: &str = "fuse.b";
pub const CLS_W: &str = "cls.w";
pub const CLS_B: &str = "cls.b";

/// Number of token classes (`O`, `C`, `E`).
pub const CLASSES: usize = 3;

/// Projections of both branches to a common width plus the gate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumHead {
    pub tc_dim: usize,
    pub ctx_dim: usize,
    pub dim: usize,
}

impl EquilibriumHead {
    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        store.insert(FUSE_P_TC, xavier(rng, self.tc_dim, self.dim));
        store.insert(FUSE_P_CTX, xavier(rng, self.ctx_dim, self.dim));
        store.insert(FUSE_W, xavier(rng, self.dim, self.dim));
        store.insert(FUSE_B, Tensor::zeros(&[1, self.dim]));
    }

    /// Projects `[L, tc_dim]` and `[L, ctx_dim]` features to `[L, dim]` each.
    pub fn project<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        tc: Var,
        ctx: Var,
    ) -> Result<(Var, Var), ModelError> {
        let p_tc = p.bind(g, FUSE_P_TC)?;
        let p_ctx = p.bind(g, FUSE_P_CTX)?;
        Ok((g.matmul(tc, p_tc)?, g.matmul(ctx, p_ctx)?))
    }
}

/// Gate and fused output for projected branches of equal shape.
pub fn equilibrium_fuse<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    p: &mut Binder<'a, T>,
    h_tc: Var,
    h_ctx: Var,
) -> Result<(Var, Var), ModelError> {
    if g.shape(h_tc) != g.shape(h_ctx) {
        return Err(TensorError::Shape {
            op: "equilibrium_fuse",
            detail: format!("{:?} vs {:?}", g.shape(h_tc), g.shape(h_ctx)),
        }
        .into());
    }
    let w = p.bind(g, FUSE_W)?;
    let b = p.bind(g, FUSE_B)?;
    let sum = g.add(h_tc, h_ctx)?;
    let z = g.matmul(sum, w)?;
    let z = g.add_row(z, b)?;
    let gate = g.sigmoid(z)?;
    let ones = g.constant(Tensor::ones(g.shape(gate)));
    let rest = g.sub(ones, gate)?;
    let from_tc = g.mul(gate, h_tc)?;
    let from_ctx = g.mul(rest, h_ctx)?;
    Ok((gate, g.add(from_tc, from_ctx)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    pub dim: usize,
}

impl Classifier {
    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        store.insert(CLS_W, xavier(rng, self.dim, CLASSES));
        store.insert(CLS_B, Tensor::zeros(&[1, CLASSES]));
    }
}

/// Per-token class distribution `[L, 3]`.
pub fn classify<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    p: &mut Binder<'a, T>,
    h: Var,
) -> Result<Var, ModelError> {
    let w = p.bind(g, CLS_W)?;
    let b = p.bind(g, CLS_B)?;
    let logits = g.matmul(h, w)?;
    let logits = g.add_row(logits, b)?;
    Ok(g.softmax(logits, 1)?)
}

/// One-hot `[L, 3]` targets for a sentence's gold tags.
pub fn gold_targets<T: Scalar>(s: &AnnotatedSentence) -> Tensor<T> {
    one_hot(&s.causal_tags)
}

pub fn one_hot<T: Scalar>(tags: &[CausalTag]) -> Tensor<T> {
    let mut t = Tensor::zeros(&[tags.len(), CLASSES]);
    for (i, tag) in tags.iter().enumerate() {
        t.set(i, tag.index(), T::one());
    }
    t
}

/// Token-mean cross-entropy against `targets`.
pub fn loss<T: Scalar>(g: &mut Graph<'_, T>, probs: Var, targets: &Tensor<T>) -> Result<Var, ModelError> {
    Ok(g.cross_entropy(probs, targets)?)
}

/// Row-wise argmax of a probability matrix. Ties go to the lowest index.
pub fn predict<T: Scalar>(probs: &Tensor<T>) -> Vec<CausalTag> {
    let (rows, cols) = probs.dims2().expect("probability matrix");
    (0..rows)
        .map(|r| {
            let row = probs.row(r);
            let best = (1..cols).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            CausalTag::from_index(best).expect("class index")
        })
        .collect()
}
