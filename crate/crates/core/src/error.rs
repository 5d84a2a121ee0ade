use thiserror::Error;

use crate::params::ParamError;
use crate::tensor::TensorError;

/// Errors raised while running model layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("no external embedding for sentence {0}")]
    MissingSentence(String),
    #[error("sentence {id}: token/vector count mismatch ({tokens} tokens, {vectors} vectors)")]
    CountMismatch {
        id: String,
        tokens: usize,
        vectors: usize,
    },
    #[error("embedding dim mismatch: configured {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid model config: {0}")]
    Config(String),
}
