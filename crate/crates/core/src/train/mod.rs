//! Training loop, evaluation and ablation runs.

mod config;
mod metrics;
mod optim;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{split_corpus, AnnotatedSentence};
use crate::encoder::{EmbeddingProvider, ExternalEmbeddings, Vocab};
use crate::error::ModelError;
use crate::graph::build_causal_kg;
use crate::head::loss;
use crate::model::{SentenceFeatures, TcGat, Variant};
use crate::params::{Binder, GradStore, ParamStore};
use crate::tensor::{Graph, TensorError};

pub use config::{ConfigError, TrainConfig};
pub use metrics::{f1, fmt4, macro_f1, round_half_up, ClassMetrics, Confusion, EvalReport};
pub use optim::Adam;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        what: String,
    },
    #[error("epoch {epoch}, batch {batch}, sentence {id}: {source}")]
    Sentence {
        epoch: usize,
        batch: usize,
        id: String,
        #[source]
        source: ModelError,
    },
}

impl TrainError {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NonFinite { .. }
                | Self::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
                | Self::Sentence {
                    source: ModelError::Tensor(TensorError::NonFinite { .. }),
                    ..
                }
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    /// Mean loss over the training set after each completed epoch, in
    /// inference mode. Early stopping watches this curve.
    pub loss_curve: Vec<f64>,
    /// Running mean of the per-batch training losses (dropout active) per
    /// epoch.
    pub dropout_loss_curve: Vec<f64>,
    pub stopped_early: bool,
    /// Probabilities raised to the floor inside the loss, summed over training.
    pub clamped: usize,
}

/// Builds the model structure from training data: vocabulary and knowledge
/// graph come from `train` only.
pub fn build_model(
    cfg: &TrainConfig,
    train: &[AnnotatedSentence],
    embeddings: Option<ExternalEmbeddings>,
) -> Result<TcGat, ModelError> {
    let provider = match embeddings {
        Some(e) => EmbeddingProvider::External(e),
        None => EmbeddingProvider::Learned {
            vocab: Vocab::build(train),
            dim: cfg.model.embed_dim,
        },
    };
    TcGat::new(cfg.model.clone(), provider, build_causal_kg(train))
}

/// Fails on the first sentence the model cannot consume: over-length or
/// without matching external vectors.
pub fn check_corpus(model: &TcGat, max_len: usize, corpus: &[AnnotatedSentence]) -> Result<(), ModelError> {
    for s in corpus {
        if s.len() > max_len {
            return Err(ModelError::Config(format!(
                "sentence {} has {} tokens, max_len is {max_len}",
                s.id,
                s.len()
            )));
        }
        model.provider.external_rows(s)?;
    }
    Ok(())
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(model: &TcGat, cfg: &TrainConfig, corpus: &[AnnotatedSentence]) -> Result<TrainOutcome, TrainError> {
    train_from(model, cfg, corpus, model.init_params(cfg.seed))
}

/// Trains starting from `params`.
///
/// Sentences are shuffled per epoch by a generator keyed on the seed and
/// epoch; each sentence's dropout seed is drawn from the same generator. Per
/// sentence gradients may be computed on several threads but are summed in
/// batch order, so results do not depend on `cfg.threads`.
pub fn train_from(
    model: &TcGat,
    cfg: &TrainConfig,
    corpus: &[AnnotatedSentence],
    mut params: ParamStore<f32>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    model.check_params(&params)?;
    check_corpus(model, cfg.max_len, corpus)?;
    let features: Vec<SentenceFeatures<f32>> = corpus.iter().map(|s| model.features(s)).collect();
    let pool = match cfg.threads {
        1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?,
        ),
    };

    let mut opt = Adam::new(&params, cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut dropout_curve = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut clamped = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let dropout_seeds: Vec<u64> = order.iter().map(|_| rng.next_u64()).collect();

        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seeds = &dropout_seeds[batch * cfg.batch_size..][..chunk.len()];
            let step = |k: usize| {
                let i = chunk[k];
                sentence_step(model, &params, &corpus[i], &features[i], seeds[k]).map_err(|source| {
                    match source {
                        ModelError::Tensor(TensorError::NonFinite { op }) => TrainError::NonFinite {
                            epoch,
                            batch,
                            what: format!("value in {op}"),
                        },
                        source => TrainError::Sentence {
                            epoch,
                            batch,
                            id: corpus[i].id.clone(),
                            source,
                        },
                    }
                })
            };
            let results: Vec<Result<Step, TrainError>> = match &pool {
                Some(pool) => pool.install(|| (0..chunk.len()).into_par_iter().map(step).collect()),
                None => (0..chunk.len()).map(step).collect(),
            };

            let mut grads = GradStore::zeros_like(&params);
            let mut batch_loss = 0.0;
            for r in results {
                let s = r?;
                batch_loss += s.loss;
                clamped += s.clamped;
                grads.accumulate(&s.grads);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    what: "loss".into(),
                });
            }
            grads.scale(1.0 / chunk.len() as f32);
            if let Some(max) = cfg.clip_norm {
                grads.clip_norm(max);
            }
            if !grads.all_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    what: "gradient".into(),
                });
            }
            opt.step(&mut params, &grads);
            epoch_loss += batch_loss;
        }
        dropout_curve.push(epoch_loss / corpus.len() as f64);
        let losses = match &pool {
            Some(pool) => pool.install(|| sentence_losses(model, &params, corpus, &features)),
            None => sentence_losses(model, &params, corpus, &features),
        }?;
        let mean = losses.iter().sum::<f64>() / corpus.len() as f64;
        if !mean.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                what: "epoch loss".into(),
            });
        }
        log::info!("epoch {} loss {mean:.6}", epoch + 1);
        curve.push(mean);

        if mean < best {
            best = mean;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            log::info!("no improvement for {} epochs; stopping", cfg.patience);
            stopped_early = true;
            break;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} probabilities were clamped to the floor during training");
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
        dropout_loss_curve: dropout_curve,
        stopped_early,
        clamped,
    })
}

struct Step {
    loss: f64,
    grads: GradStore<f32>,
    clamped: usize,
}

fn sentence_step(
    model: &TcGat,
    params: &ParamStore<f32>,
    s: &AnnotatedSentence,
    f: &SentenceFeatures<f32>,
    seed: u64,
) -> Result<Step, ModelError> {
    let mut g = Graph::training(seed);
    let mut p = Binder::new(params);
    let trace = model.forward(&mut g, &mut p, s, f)?;
    let l = loss(&mut g, trace.probs, &f.targets)?;
    let mut grads = g.backward(l)?;
    Ok(Step {
        loss: f64::from(g.value(l).item()),
        grads: p.collect(&mut grads),
        clamped: g.clamp_count(),
    })
}

fn sentence_losses(
    model: &TcGat,
    params: &ParamStore<f32>,
    corpus: &[AnnotatedSentence],
    features: &[SentenceFeatures<f32>],
) -> Result<Vec<f64>, ModelError> {
    corpus
        .par_iter()
        .zip(features)
        .map(|(s, f)| {
            let mut g = Graph::new();
            let mut p = Binder::new(params);
            let t = model.forward(&mut g, &mut p, s, f)?;
            let l = loss(&mut g, t.probs, &f.targets)?;
            Ok(f64::from(g.value(l).item()))
        })
        .collect()
}

/// Mean over sentences of the token-mean cross-entropy, in inference mode
/// (no dropout).
pub fn mean_loss(model: &TcGat, params: &ParamStore<f32>, corpus: &[AnnotatedSentence]) -> Result<f64, ModelError> {
    let features: Vec<SentenceFeatures<f32>> = corpus.iter().map(|s| model.features(s)).collect();
    let losses = sentence_losses(model, params, corpus, &features)?;
    Ok(losses.iter().sum::<f64>() / corpus.len().max(1) as f64)
}

/// Token-level scores of `params` on `corpus`.
pub fn evaluate(model: &TcGat, params: &ParamStore<f32>, corpus: &[AnnotatedSentence]) -> Result<EvalReport, ModelError> {
    let per_sentence: Vec<Confusion> = corpus
        .par_iter()
        .map(|s| {
            let mut c = Confusion::default();
            c.record_all(&s.causal_tags, &model.predict(params, s)?);
            Ok(c)
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = Confusion::default();
    for c in &per_sentence {
        total.merge(c);
    }
    Ok(EvalReport::from_confusion(total, corpus.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub final_loss: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<15} {:>8} {:>8} {:>8} {:>10} {:>7}",
            "variant", "F1(C)", "F1(E)", "macro", "train loss", "epochs"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<15} {:>8} {:>8} {:>8} {:>10.4} {:>7}",
                r.variant.name(),
                fmt4(r.report.cause.f1),
                fmt4(r.report.effect.f1),
                fmt4(r.report.macro_f1),
                r.final_loss,
                r.epochs
            )?;
        }
        write!(f, "{} train / {} test sentences", self.train_sentences, self.test_sentences)
    }
}

/// Fraction of a corpus used for training in ablation runs.
pub const TRAIN_FRACTION: f64 = 2.0 / 3.0;

/// Splits `corpus` 2:1 with `cfg.seed`, then trains and evaluates every
/// variant under that seed and split.
pub fn run_ablation(
    cfg: &TrainConfig,
    corpus: &[AnnotatedSentence],
    embeddings: Option<&ExternalEmbeddings>,
    variants: &[Variant],
) -> Result<AblationReport, TrainError> {
    let (train_set, test_set) = split_corpus(corpus, cfg.seed, TRAIN_FRACTION);
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = variant;
        log::info!("ablation: training {variant}");
        let model = build_model(&vcfg, &train_set, embeddings.cloned())?;
        check_corpus(&model, vcfg.max_len, &test_set)?;
        let out = train(&model, &vcfg, &train_set)?;
        let report = evaluate(&model, &out.params, &test_set)?;
        rows.push(AblationRow {
            variant,
            report,
            final_loss: out.loss_curve.last().copied().unwrap_or(f64::NAN),
            epochs: out.loss_curve.len(),
        });
    }
    Ok(AblationReport {
        train_sentences: train_set.len(),
        test_sentences: test_set.len(),
        rows,
    })
}
