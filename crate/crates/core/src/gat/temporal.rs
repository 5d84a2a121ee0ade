//! Relation-typed attention over the six temporal masks.
//!
//! For head `k` and state `I` in `B, A, S, I, M, N`:
//!
//! ```text
//! e_I     = a^k · [h W_M^k ; h W_I^k]        (pairwise, M on the query side)
//! alpha_I = softmax_row(LeakyReLU(e_I) | adj_I)
//! h'_k    = ELU(sum_I alpha_I (h W_I^k))
//! ```
//!
//! and the output concatenates `h'_1 .. h'_K`.

use rand::Rng;

use super::{masked_attention, pair_scores, GatConfig};
use crate::error::ModelError;
use crate::graph::{TimeMatrices, TimeState};
use crate::params::{xavier, Binder, ParamStore};
use crate::tensor::{Graph, MaskMode, Scalar, Tensor, Var};

/// Masks in [`TimeState::ALL`] order.
pub fn time_masks<T: Scalar>(tm: &TimeMatrices) -> [Tensor<T>; 6] {
    TimeState::ALL.map(|s| tm.get(s).to_tensor())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGat {
    pub name: String,
    pub input_dim: usize,
    pub config: GatConfig,
}

/// Intermediate values of one forward pass.
pub struct TemporalTrace {
    /// `alphas[head][state]`, states in [`TimeState::ALL`] order.
    pub alphas: Vec<Vec<Var>>,
    pub output: Var,
}

impl TemporalGat {
    pub fn new(name: impl Into<String>, input_dim: usize, config: GatConfig) -> Self {
        Self {
            name: name.into(),
            input_dim,
            config,
        }
    }

    pub fn weight_name(&self, head: usize, state: TimeState) -> String {
        format!("{}.h{head}.w_{}", self.name, state.name())
    }

    pub fn attention_name(&self, head: usize) -> String {
        format!("{}.h{head}.a", self.name)
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let m = self.config.dim;
        for k in 0..self.config.heads {
            for s in TimeState::ALL {
                store.insert(self.weight_name(k, s), xavier(rng, self.input_dim, m));
            }
            store.insert(self.attention_name(k), xavier(rng, 2 * m, 1));
        }
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        h: Var,
        masks: &[Tensor<T>; 6],
    ) -> Result<Var, ModelError> {
        Ok(self.forward_traced(g, p, h, masks)?.output)
    }

    pub fn forward_traced<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        h: Var,
        masks: &[Tensor<T>; 6],
    ) -> Result<TemporalTrace, ModelError> {
        let mode: MaskMode = self.config.mask_mode.into();
        let m_index = TimeState::ALL
            .iter()
            .position(|&s| s == TimeState::M)
            .expect("M state");
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut alphas = Vec::with_capacity(self.config.heads);
        for k in 0..self.config.heads {
            let a = p.bind(g, &self.attention_name(k))?;
            let mut proj = Vec::with_capacity(6);
            for s in TimeState::ALL {
                let w = p.bind(g, &self.weight_name(k, s))?;
                proj.push(g.matmul(h, w)?);
            }
            let query = proj[m_index];
            let mut head_alphas = Vec::with_capacity(6);
            let mut total: Option<Var> = None;
            for (i, &key) in proj.iter().enumerate() {
                let scores = pair_scores(g, query, key, a)?;
                let alpha = masked_attention(g, scores, &masks[i], self.config.leaky_slope, mode)?;
                head_alphas.push(alpha);
                let alpha = g.dropout(alpha, self.config.dropout)?;
                let term = g.matmul(alpha, key)?;
                total = Some(match total {
                    Some(acc) => g.add(acc, term)?,
                    None => term,
                });
            }
            heads.push(g.elu(total.expect("six states"))?);
            alphas.push(head_alphas);
        }
        let output = g.concat(&heads, 1)?;
        Ok(TemporalTrace { alphas, output })
    }
}
