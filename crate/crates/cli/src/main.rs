//! `tcgat` command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input or I/O failures, 2 for
//! numerical failures (non-finite values during training or evaluation, or a
//! failed gradient check).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;
use tcgat::corpus::{corpus_stats, generate_synthetic, parse_corpus, save_corpus, TemplateConfig, DEFAULT_MAX_LEN};
use tcgat::encoder::ExternalEmbeddings;
use tcgat::error::ModelError;
use tcgat::gradsuite::gradient_suite;
use tcgat::graph::{build_causal_kg, build_time_matrices, CausalKg};
use tcgat::model::{load_model, save_model, ModelFileError};
use tcgat::tensor::TensorError;
use tcgat::train::{build_model, evaluate, run_ablation, train, TrainError};
use tcgat::{TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "tcgat", version, about = "Temporal-causal token tagging with graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a JSONL corpus.
    Validate {
        path: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Print tag and relation counts of a corpus as JSON.
    Stats {
        path: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of sentences without a causal pair.
        #[arg(long)]
        distractor_fraction: Option<f64>,
    },
    /// Build the causal knowledge graph from training data.
    BuildKg {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-sentence time matrices (and knowledge-graph adjacency when
    /// `--kg` is given) as JSON files.
    ExportMatrices {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kg: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a test corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Where to write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score every model variant on a 2:1 split.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Where to write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

enum Failure {
    Invalid(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Invalid(e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else {
            Failure::Invalid(e.into())
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(TensorError::NonFinite { .. }) => Failure::Numerical(e.into()),
            e => Failure::Invalid(e.into()),
        }
    }
}

impl From<ModelFileError> for Failure {
    fn from(e: ModelFileError) -> Self {
        match e {
            ModelFileError::Model(e) => e.into(),
            e => Failure::Invalid(e.into()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_corpus(path: &Path, max_len: usize) -> anyhow::Result<Vec<tcgat::AnnotatedSentence>> {
    parse_corpus(path, max_len).with_context(|| format!("reading {}", path.display()))
}

fn load_embeddings(path: Option<&Path>) -> anyhow::Result<Option<ExternalEmbeddings>> {
    path.map(|p| ExternalEmbeddings::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn load_config(path: &Path) -> anyhow::Result<TrainConfig> {
    TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { path, max_len } => {
            let corpus = load_corpus(&path, max_len)?;
            println!("{}: {} sentences OK", path.display(), corpus.len());
        }
        Command::Stats { path, max_len } => {
            let corpus = load_corpus(&path, max_len)?;
            let stats = serde_json::to_string_pretty(&corpus_stats(&corpus)).map_err(anyhow::Error::from)?;
            println!("{stats}");
        }
        Command::Synth {
            n,
            seed,
            out,
            distractor_fraction,
        } => {
            let mut templates = TemplateConfig::default();
            if let Some(f) = distractor_fraction {
                templates.distractor_fraction = f;
            }
            let corpus = generate_synthetic(n, seed, &templates).map_err(anyhow::Error::from)?;
            save_corpus(&out, &corpus).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} sentences to {}", corpus.len(), out.display());
        }
        Command::BuildKg { train, out } => {
            let corpus = load_corpus(&train, DEFAULT_MAX_LEN)?;
            let kg = build_causal_kg(&corpus);
            write(&out, &kg.to_json())?;
            println!("{} nodes, {} edges written to {}", kg.node_count(), kg.edge_count(), out.display());
        }
        Command::ExportMatrices { corpus, out, kg } => {
            let corpus = load_corpus(&corpus, DEFAULT_MAX_LEN)?;
            let kg = kg
                .map(|p| -> anyhow::Result<CausalKg> {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    CausalKg::from_json(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .transpose()?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (k, s) in corpus.iter().enumerate() {
                let mut record = json!({
                    "id": s.id,
                    "tokens": s.tokens,
                    "time": build_time_matrices(s),
                });
                if let Some(kg) = &kg {
                    record["adj_kg"] = json!(kg.sentence_adj(s).adj_kg);
                }
                let safe: String = s
                    .id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                    .collect();
                write(&out.join(format!("{k:05}-{safe}.json")), &record.to_string())?;
            }
            println!("wrote {} matrix files to {}", corpus.len(), out.display());
        }
        Command::Train {
            config,
            train: train_path,
            embeddings,
            out,
        } => {
            let cfg = load_config(&config)?;
            let corpus = load_corpus(&train_path, cfg.max_len)?;
            let embeddings = load_embeddings(embeddings.as_deref())?;
            let model = build_model(&cfg, &corpus, embeddings)?;
            let outcome = train(&model, &cfg, &corpus)?;
            save_model(&out, &model, &outcome.params)?;
            let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} epochs{}, final loss {last:.6}; checkpoint written to {}",
                outcome.loss_curve.len(),
                if outcome.stopped_early { " (stopped early)" } else { "" },
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            test,
            embeddings,
            report,
        } => {
            let embeddings = load_embeddings(embeddings.as_deref())?;
            let (model, params) = load_model(&ckpt, embeddings)?;
            let corpus = load_corpus(&test, DEFAULT_MAX_LEN)?;
            tcgat::train::check_corpus(&model, DEFAULT_MAX_LEN, &corpus)?;
            let result = evaluate(&model, &params, &corpus)?;
            if !result.macro_f1.is_finite() {
                return Err(Failure::Numerical(anyhow!("macro-F1 is not finite")));
            }
            println!("{result}");
            if let Some(path) = report {
                write(&path, &result.to_json())?;
            }
        }
        Command::Ablate {
            config,
            corpus,
            embeddings,
            report,
        } => {
            let cfg = load_config(&config)?;
            let corpus = load_corpus(&corpus, cfg.max_len)?;
            let embeddings = load_embeddings(embeddings.as_deref())?;
            let result = run_ablation(&cfg, &corpus, embeddings.as_ref(), &Variant::ALL)?;
            println!("{result}");
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&result).map_err(anyhow::Error::from)?;
                write(&path, &text)?;
            }
        }
        Command::Gradcheck => {
            let cases = gradient_suite();
            let mut failed = 0;
            for c in &cases {
                let status = if c.passed() { "ok  " } else { "FAIL" };
                print!("{status} {:<40} max rel error {:.3e}", c.name, c.max_rel_error);
                match &c.error {
                    Some(e) => println!(" ({e})"),
                    None => println!(),
                }
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                return Err(Failure::Numerical(anyhow!("{failed} of {} gradient checks failed", cases.len())));
            }
            println!("{} gradient checks passed", cases.len());
        }
    }
    Ok(())
}
