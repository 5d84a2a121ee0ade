//! Masked multi-head graph attention.
//!
//! Both layers score token pairs as `e[i][j] = a_q · q_i + a_k · k_j`, where
//! `q = h W_q` and `k = h W_k` are per-head projections and `a = [a_q; a_k]`
//! is the head's attention vector. Scores pass through LeakyReLU and a row
//! softmax restricted to the adjacency mask; attended values are summed,
//! passed through ELU, and heads are concatenated.

mod causal;
mod temporal;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::{EmptySlice, Graph, MaskMode, Scalar, Tensor, Var};

pub use causal::CausalGat;
pub use temporal::{time_masks, TemporalGat, TemporalTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    /// Per-head output width.
    pub dim: usize,
    pub heads: usize,
    /// Dropout on attention weights, training only.
    pub dropout: f64,
    pub leaky_slope: f64,
    pub mask_mode: MaskModeName,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            heads: 3,
            dropout: 0.15,
            leaky_slope: 0.008,
            mask_mode: MaskModeName::Renormalize,
        }
    }
}

impl GatConfig {
    pub fn output_dim(&self) -> usize {
        self.dim * self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.dim == 0 {
            return Err(ModelError::Config("attention heads and dim must be positive".into()));
        }
        if self.leaky_slope <= 0.0 {
            return Err(ModelError::Config("leaky slope must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Config-file spelling of [`MaskMode`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskModeName {
    #[default]
    Renormalize,
    Literal,
}

impl From<MaskModeName> for MaskMode {
    fn from(m: MaskModeName) -> Self {
        match m {
            MaskModeName::Renormalize => MaskMode::Renormalize,
            MaskModeName::Literal => MaskMode::Literal,
        }
    }
}

impl std::str::FromStr for MaskModeName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "renormalize" => Ok(Self::Renormalize),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown mask mode {other:?}")),
        }
    }
}

/// Pairwise scores `[L, L]` from query projections `[L, m]`, key projections
/// `[L, m]` and an attention vector `[2m, 1]`.
pub fn pair_scores<T: Scalar>(
    g: &mut Graph<'_, T>,
    query: Var,
    key: Var,
    a: Var,
) -> Result<Var, ModelError> {
    let m = g.shape(query)[1];
    let a_q = g.narrow(a, 0, 0, m)?;
    let a_k = g.narrow(a, 0, m, m)?;
    let sq = g.matmul(query, a_q)?;
    let sk = g.matmul(key, a_k)?;
    let sk_row = g.transpose(sk)?;
    Ok(g.outer_sum(sq, sk_row)?)
}

/// LeakyReLU then row softmax under `mask`. Rows with no neighbors come out
/// as zeros.
pub fn masked_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    scores: Var,
    mask: &Tensor<T>,
    slope: f64,
    mode: MaskMode,
) -> Result<Var, ModelError> {
    let activated = g.leaky_relu(scores, T::lit(slope))?;
    Ok(g.masked_softmax(activated, mask, 1, mode, EmptySlice::Zero)?)
}
