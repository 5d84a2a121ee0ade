//! Full tagger: encoder, both attention branches, equilibrium head and
//! classifier, plus the ablation variants.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::corpus::{AnnotatedSentence, CausalTag};
use crate::encoder::{BiLstm, EmbeddingMode, EmbeddingProvider, ExternalEmbeddings, Vocab};
use crate::error::ModelError;
use crate::gat::{time_masks, CausalGat, GatConfig, TemporalGat};
use crate::graph::{build_time_matrices, CausalKg};
use crate::head::{classify, equilibrium_fuse, gold_targets, predict, Classifier, EquilibriumHead};
use crate::params::{xavier, Binder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Projection of external vectors to the BiLSTM input width.
pub const EMBED_PROJ: &str = "embed.proj";

/// Which branches reach the classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Gated fusion of both branches.
    #[default]
    Full,
    /// Gate fixed at one: temporal-causal features only.
    NoContext,
    /// Gate removed: projected branches are summed.
    NoEquilibrium,
    /// C-GAT slice of the fuse input set to zero.
    TgatOnly,
    /// T-GAT slice of the fuse input set to zero.
    CgatOnly,
    /// Gate fixed at zero: contextual features only.
    ContextOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Self::Full,
        Self::NoContext,
        Self::NoEquilibrium,
        Self::TgatOnly,
        Self::CgatOnly,
        Self::ContextOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoContext => "no-context",
            Self::NoEquilibrium => "no-equilibrium",
            Self::TgatOnly => "tgat-only",
            Self::CgatOnly => "cgat-only",
            Self::ContextOnly => "context-only",
        }
    }

    fn uses_tgat(self) -> bool {
        !matches!(self, Self::CgatOnly | Self::ContextOnly)
    }

    fn uses_cgat(self) -> bool {
        !matches!(self, Self::TgatOnly | Self::ContextOnly)
    }

    fn uses_tc(self) -> bool {
        self != Self::ContextOnly
    }

    fn uses_ctx(self) -> bool {
        self != Self::NoContext
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// BiLSTM input width (lookup table width in learned mode).
    pub embed_dim: usize,
    pub bilstm_hidden: usize,
    pub tgat: GatConfig,
    pub cgat: GatConfig,
    pub fuse_dim: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            bilstm_hidden: 150,
            tgat: GatConfig::default(),
            cgat: GatConfig::default(),
            fuse_dim: 300,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.bilstm_hidden == 0 || self.fuse_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        self.tgat.validate()?;
        self.cgat.validate()
    }
}

/// Per-sentence inputs that do not depend on parameters.
#[derive(Clone, Debug)]
pub struct SentenceFeatures<T> {
    /// Time masks in `B, A, S, I, M, N` order.
    pub masks: [Tensor<T>; 6],
    pub adj_kg: Tensor<T>,
    /// One-hot gold tags `[L, 3]`.
    pub targets: Tensor<T>,
}

/// Handles to the intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `[head][state]` attention weights.
    pub tgat_alphas: Vec<Vec<Var>>,
    /// Per-head knowledge-graph attention weights.
    pub cgat_alphas: Vec<Var>,
    /// T-GAT output concatenated with C-GAT output, before projection.
    pub fuse_input: Option<Var>,
    pub h_tc: Option<Var>,
    pub h_ctx: Option<Var>,
    pub gate: Option<Var>,
    pub fused: Var,
    pub probs: Var,
}

/// Model structure; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct TcGat {
    pub config: ModelConfig,
    pub provider: EmbeddingProvider,
    pub kg: CausalKg,
}

impl TcGat {
    pub fn new(config: ModelConfig, provider: EmbeddingProvider, kg: CausalKg) -> Result<Self, ModelError> {
        config.validate()?;
        if let EmbeddingProvider::Learned { dim, .. } = &provider {
            if *dim != config.embed_dim {
                return Err(ModelError::DimMismatch {
                    expected: config.embed_dim,
                    found: *dim,
                });
            }
        }
        Ok(Self { config, provider, kg })
    }

    pub fn bilstm(&self) -> BiLstm {
        BiLstm::new("bilstm", self.config.embed_dim, self.config.bilstm_hidden)
    }

    pub fn tgat(&self) -> TemporalGat {
        TemporalGat::new("tgat", self.bilstm().output_dim(), self.config.tgat.clone())
    }

    pub fn cgat(&self) -> CausalGat {
        CausalGat::new("cgat", self.bilstm().output_dim(), self.config.cgat.clone())
    }

    /// Width of the contextual branch before projection: the raw external
    /// vectors when present, the BiLSTM states otherwise.
    pub fn context_dim(&self) -> usize {
        match &self.provider {
            EmbeddingProvider::External(e) => e.dim(),
            EmbeddingProvider::Learned { .. } => self.bilstm().output_dim(),
        }
    }

    pub fn head(&self) -> EquilibriumHead {
        EquilibriumHead {
            tc_dim: self.config.tgat.output_dim() + self.config.cgat.output_dim(),
            ctx_dim: self.context_dim(),
            dim: self.config.fuse_dim,
        }
    }

    pub fn classifier(&self) -> Classifier {
        Classifier {
            dim: self.config.fuse_dim,
        }
    }

    /// Fresh parameters; identical seeds give identical stores.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.provider.init(&mut store, &mut rng);
        if let EmbeddingProvider::External(e) = &self.provider {
            store.insert(EMBED_PROJ, xavier(&mut rng, e.dim(), self.config.embed_dim));
        }
        self.bilstm().init(&mut store, &mut rng);
        self.tgat().init(&mut store, &mut rng);
        self.cgat().init(&mut store, &mut rng);
        self.head().init(&mut store, &mut rng);
        self.classifier().init(&mut store, &mut rng);
        store
    }

    /// Checks that `store` holds exactly the expected names and shapes.
    pub fn check_params<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        let expected = self.init_params::<f32>(0);
        for (name, t) in expected.iter() {
            store.expect_shape(name, t.shape())?;
        }
        if let Some(extra) = store.names().find(|n| expected.index_of(n).is_none()) {
            return Err(ModelError::Config(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn features<T: Scalar>(&self, s: &AnnotatedSentence) -> SentenceFeatures<T> {
        SentenceFeatures {
            masks: time_masks(&build_time_matrices(s)),
            adj_kg: self.kg.sentence_adj(s).adj_kg.to_tensor(),
            targets: gold_targets(s),
        }
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        s: &AnnotatedSentence,
        f: &SentenceFeatures<T>,
    ) -> Result<ForwardTrace, ModelError> {
        let variant = self.config.variant;
        let len = s.len();
        let raw = self.provider.embed(g, p, s)?;
        let x = match self.provider {
            EmbeddingProvider::External(_) => {
                let proj = p.bind(g, EMBED_PROJ)?;
                g.matmul(raw, proj)?
            }
            EmbeddingProvider::Learned { .. } => raw,
        };
        let h = self.bilstm().forward(g, p, x)?;

        let mut trace = ForwardTrace {
            tgat_alphas: Vec::new(),
            cgat_alphas: Vec::new(),
            fuse_input: None,
            h_tc: None,
            h_ctx: None,
            gate: None,
            fused: h,
            probs: h,
        };
        if variant.uses_tc() {
            let t_out = if variant.uses_tgat() {
                let t = self.tgat().forward_traced(g, p, h, &f.masks)?;
                trace.tgat_alphas = t.alphas;
                t.output
            } else {
                g.constant(Tensor::zeros(&[len, self.config.tgat.output_dim()]))
            };
            let c_out = if variant.uses_cgat() {
                let (alphas, out) = self.cgat().forward_traced(g, p, h, &f.adj_kg)?;
                trace.cgat_alphas = alphas;
                out
            } else {
                g.constant(Tensor::zeros(&[len, self.config.cgat.output_dim()]))
            };
            let fuse_input = g.concat(&[t_out, c_out], 1)?;
            let p_tc = p.bind(g, crate::head::FUSE_P_TC)?;
            trace.fuse_input = Some(fuse_input);
            trace.h_tc = Some(g.matmul(fuse_input, p_tc)?);
        }
        if variant.uses_ctx() {
            let ctx = match self.provider {
                EmbeddingProvider::External(_) => raw,
                EmbeddingProvider::Learned { .. } => h,
            };
            let p_ctx = p.bind(g, crate::head::FUSE_P_CTX)?;
            trace.h_ctx = Some(g.matmul(ctx, p_ctx)?);
        }
        trace.fused = match (variant, trace.h_tc, trace.h_ctx) {
            (Variant::NoEquilibrium, Some(tc), Some(ctx)) => g.add(tc, ctx)?,
            (_, Some(tc), Some(ctx)) => {
                let (gate, fused) = equilibrium_fuse(g, p, tc, ctx)?;
                trace.gate = Some(gate);
                fused
            }
            (_, Some(tc), None) => tc,
            (_, None, Some(ctx)) => ctx,
            (_, None, None) => unreachable!("every variant keeps a branch"),
        };
        trace.probs = classify(g, p, trace.fused)?;
        Ok(trace)
    }

    /// Class probabilities `[L, 3]` in inference mode.
    pub fn predict_probs<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        s: &AnnotatedSentence,
    ) -> Result<Tensor<T>, ModelError> {
        let f = self.features(s);
        let mut g = Graph::new();
        let mut p = Binder::new(params);
        let trace = self.forward(&mut g, &mut p, s, &f)?;
        Ok(g.value(trace.probs).clone())
    }

    pub fn predict<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        s: &AnnotatedSentence,
    ) -> Result<Vec<CausalTag>, ModelError> {
        Ok(predict(&self.predict_probs(params, s)?))
    }

    pub fn meta(&self) -> ModelMeta {
        let (vocab, external_dim) = match &self.provider {
            EmbeddingProvider::Learned { vocab, .. } => (Some(vocab.clone()), None),
            EmbeddingProvider::External(e) => (None, Some(e.dim())),
        };
        ModelMeta {
            config: self.config.clone(),
            embedding: self.provider.mode(),
            vocab,
            external_dim,
            kg: self.kg.clone(),
        }
    }
}

/// Everything besides tensors needed to rebuild a model, stored next to the
/// checkpoint as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub embedding: EmbeddingMode,
    pub vocab: Option<Vocab>,
    pub external_dim: Option<usize>,
    pub kg: CausalKg,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model metadata {path}: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its metadata sidecar.
pub fn save_model(path: &Path, model: &TcGat, params: &ParamStore<f32>) -> Result<(), ModelFileError> {
    save_checkpoint(path, params)?;
    let meta_file = meta_path(path);
    let json = serde_json::to_string_pretty(&model.meta()).map_err(|e| ModelFileError::Meta {
        path: meta_file.clone(),
        source: e.into(),
    })?;
    std::fs::write(&meta_file, json).map_err(|e| ModelFileError::Meta {
        path: meta_file,
        source: e.into(),
    })
}

/// Loads a checkpoint and its sidecar. External-mode models need the same
/// embedding file they were trained against, or one covering the test ids.
pub fn load_model(
    path: &Path,
    embeddings: Option<ExternalEmbeddings>,
) -> Result<(TcGat, ParamStore<f32>), ModelFileError> {
    let params = load_checkpoint(path)?;
    let meta_file = meta_path(path);
    let meta_err = |e: Box<dyn std::error::Error + Send + Sync>| ModelFileError::Meta {
        path: meta_file.clone(),
        source: e,
    };
    let text = std::fs::read_to_string(&meta_file).map_err(|e| meta_err(e.into()))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| meta_err(e.into()))?;
    let provider = match (meta.embedding, meta.vocab, embeddings) {
        (EmbeddingMode::LearnedLookup, Some(vocab), None) => EmbeddingProvider::Learned {
            vocab,
            dim: meta.config.embed_dim,
        },
        (EmbeddingMode::ExternalContextual, _, Some(e)) => {
            let expected = meta.external_dim.unwrap_or(e.dim());
            if e.dim() != expected {
                return Err(ModelError::DimMismatch {
                    expected,
                    found: e.dim(),
                }
                .into());
            }
            EmbeddingProvider::External(e)
        }
        (EmbeddingMode::ExternalContextual, _, None) => {
            return Err(meta_err("model was trained on external embeddings; none given".into()))
        }
        (EmbeddingMode::LearnedLookup, _, Some(_)) => {
            return Err(meta_err("model uses learned embeddings; external file not accepted".into()))
        }
        (EmbeddingMode::LearnedLookup, None, None) => return Err(meta_err("missing vocabulary".into())),
    };
    let model = TcGat::new(meta.config, provider, meta.kg)?;
    model.check_params(&params)?;
    Ok((model, params))
}
