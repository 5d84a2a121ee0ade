//! Token features: embedding lookup or external contextual vectors, then a
//! BiLSTM.

mod bilstm;
mod tcemb;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::error::ModelError;
use crate::graph::normalize_token;
use crate::params::{Binder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use bilstm::{BiLstm, Direction};
pub use tcemb::{EmbeddingFileError, ExternalEmbeddings, EMBEDDING_MAGIC};

pub const UNK: &str = "<unk>";
pub const EMBED_TABLE: &str = "embed.table";

/// Lowercased token vocabulary; row 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'s>(sentences: impl IntoIterator<Item = &'s AnnotatedSentence>) -> Self {
        let mut tokens = vec![UNK.to_owned()];
        let mut index = HashMap::from([(UNK.to_owned(), 0)]);
        for s in sentences {
            for t in &s.tokens {
                let t = normalize_token(t);
                if !index.contains_key(&t) {
                    index.insert(t.clone(), tokens.len());
                    tokens.push(t);
                }
            }
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(&normalize_token(token)).copied().unwrap_or(0)
    }

    pub fn ids(&self, s: &AnnotatedSentence) -> Vec<usize> {
        s.tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    LearnedLookup,
    ExternalContextual,
}

/// Source of the per-token input matrix.
#[derive(Clone, Debug)]
pub enum EmbeddingProvider {
    /// Trainable `[V, dim]` table indexed through the vocabulary.
    Learned { vocab: Vocab, dim: usize },
    /// Frozen vectors loaded from a `TCEMB1` file.
    External(ExternalEmbeddings),
}

impl EmbeddingProvider {
    pub fn mode(&self) -> EmbeddingMode {
        match self {
            Self::Learned { .. } => EmbeddingMode::LearnedLookup,
            Self::External(_) => EmbeddingMode::ExternalContextual,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Learned { dim, .. } => *dim,
            Self::External(e) => e.dim(),
        }
    }

    /// Registers the lookup table in learned mode; external mode has no
    /// parameters.
    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        if let Self::Learned { vocab, dim } = self {
            let scale = 1.0 / (*dim as f64).sqrt();
            let data = (0..vocab.len() * dim)
                .map(|_| T::lit(rng.random_range(-scale..scale)))
                .collect();
            store.insert(EMBED_TABLE, Tensor::new(&[vocab.len(), *dim], data).expect("table"));
        }
    }

    /// External vectors for a sentence, validated against its token count.
    pub fn external_rows(&self, s: &AnnotatedSentence) -> Result<Option<&Tensor<f32>>, ModelError> {
        let Self::External(e) = self else { return Ok(None) };
        let t = e
            .get(&s.id)
            .ok_or_else(|| ModelError::MissingSentence(s.id.clone()))?;
        if t.shape()[0] != s.len() {
            return Err(ModelError::CountMismatch {
                id: s.id.clone(),
                tokens: s.len(),
                vectors: t.shape()[0],
            });
        }
        Ok(Some(t))
    }

    /// `[L, dim]` input rows for `s`.
    pub fn embed<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        s: &AnnotatedSentence,
    ) -> Result<Var, ModelError> {
        match self {
            Self::Learned { vocab, dim } => {
                let table = p.bind(g, EMBED_TABLE)?;
                let found = g.shape(table)[1];
                if found != *dim {
                    return Err(ModelError::DimMismatch {
                        expected: *dim,
                        found,
                    });
                }
                Ok(g.gather_rows(table, &vocab.ids(s))?)
            }
            Self::External(_) => {
                let rows = self.external_rows(s)?.expect("external mode");
                Ok(g.constant(rows.cast()))
            }
        }
    }
}
