//! `thredkit`: vocabulary, topic model, training, generation and evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or malformed input,
//! 4 numeric divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thredkit::corpus::DEFAULT_TOP_K;
use thredkit::decode::{DEFAULT_BEAM, DEFAULT_MAX_LEN};
use thredkit::topics::{DEFAULT_ITERS, DEFAULT_KL_EPS, DEFAULT_RANK, DEFAULT_TOL, DEFAULT_WINDOW};
use thredkit::Error;

use config::{KeySpec, RunConfig};

#[derive(Parser)]
#[command(name = "thredkit", version, about = "Topic-aware hierarchical dialog generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frequency-ranked vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Build the PPMI matrix and factorise it into a topic model.
    Topics(TopicsArgs),
    /// Train a model; writes checkpoints, a per-epoch CSV log and the resolved config.
    Train(TrainArgs),
    /// Generate one reply per context line.
    Generate(GenerateArgs),
    /// Score generated replies; writes a JSON report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    /// Keep the corpus casing.
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args)]
struct TopicsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// One stopword per line; the built-in list when omitted.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    topic_model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    valid_corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One context per line, utterances separated by `__eou__`.
    #[arg(long)]
    context_file: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the vocabulary recorded in the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long)]
    topic_model: Option<PathBuf>,
    /// Needed for perplexity only.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Comma-separated F-score betas.
    #[arg(long)]
    betas: Option<String>,
    /// Latent draws averaged per token for perplexity.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn path_str(p: &std::path::Path) -> String {
    p.display().to_string()
}

const VOCAB_KEYS: &[KeySpec] = &[("corpus", None), ("out", None), ("top_k", None), ("lowercase", Some("true"))];

const TOPIC_KEYS: &[KeySpec] = &[
    ("corpus", None),
    ("vocab", None),
    ("stopwords", None),
    ("window", None),
    ("rank", None),
    ("iters", None),
    ("tol", None),
    ("seed", None),
    ("out", None),
    ("lowercase", Some("true")),
];

const TRAIN_KEYS: &[KeySpec] = &[
    ("variant", Some("thred")),
    ("corpus", None),
    ("valid_corpus", None),
    ("vocab", None),
    ("topic_model", None),
    ("out_dir", None),
    ("lowercase", Some("true")),
    ("embed_dim", Some("500")),
    ("hidden_dim", Some("500")),
    ("latent_dim", Some("100")),
    ("topic_weight", Some("1")),
    ("kl_anneal_steps", Some("10000")),
    ("lr", Some("0.0002")),
    ("steps", Some("20000")),
    ("batch_size", Some("16")),
    ("clip_norm", Some("5")),
    ("epoch_steps", None),
    ("max_context", None),
    ("kl_eps", None),
    ("seed", None),
];

const GENERATE_KEYS: &[KeySpec] = &[
    ("checkpoint", None),
    ("context_file", None),
    ("out", None),
    ("beam", None),
    ("max_len", None),
    ("seed", None),
    ("vocab", None),
];

const EVAL_KEYS: &[KeySpec] = &[
    ("refs", None),
    ("hyps", None),
    ("contexts", None),
    ("topic_model", None),
    ("checkpoint", None),
    ("vocab", None),
    ("betas", Some("0.5,1,1.5")),
    ("samples", Some("1")),
    ("kl_eps", None),
    ("seed", None),
    ("out", None),
];

fn run(cli: Cli) -> thredkit::Result<()> {
    match cli.command {
        Command::BuildVocab(a) => {
            let mut c = RunConfig::new("build-vocab", VOCAB_KEYS);
            c.set("corpus", path_str(&a.corpus))?;
            c.set("out", path_str(&a.out))?;
            c.set("top_k", a.top_k.unwrap_or(DEFAULT_TOP_K).to_string())?;
            if a.no_lowercase {
                c.set("lowercase", "false")?;
            }
            commands::build_vocab(&c)
        }
        Command::Topics(a) => {
            let mut c = RunConfig::new("topics", TOPIC_KEYS);
            c.set("corpus", path_str(&a.corpus))?;
            c.set("vocab", path_str(&a.vocab))?;
            c.set_opt("stopwords", a.stopwords.as_deref().map(path_str))?;
            c.set("window", a.window.unwrap_or(DEFAULT_WINDOW).to_string())?;
            c.set("rank", a.rank.unwrap_or(DEFAULT_RANK).to_string())?;
            c.set("iters", a.iters.unwrap_or(DEFAULT_ITERS).to_string())?;
            c.set("tol", a.tol.unwrap_or(DEFAULT_TOL).to_string())?;
            c.set_opt("seed", a.seed)?;
            c.set("out", path_str(&a.out))?;
            if a.no_lowercase {
                c.set("lowercase", "false")?;
            }
            c.seed_from_env()?;
            commands::topics(&c)
        }
        Command::Train(a) => {
            let mut c = RunConfig::new("train", TRAIN_KEYS);
            c.set("kl_eps", DEFAULT_KL_EPS.to_string())?;
            if let Some(p) = &a.config {
                c.merge_file(p)?;
            }
            c.apply_assignments(&a.set)?;
            c.set_opt("variant", a.variant)?;
            c.set_opt("topic_model", a.topic_model.as_deref().map(path_str))?;
            c.set_opt("corpus", a.corpus.as_deref().map(path_str))?;
            c.set_opt("valid_corpus", a.valid_corpus.as_deref().map(path_str))?;
            c.set_opt("vocab", a.vocab.as_deref().map(path_str))?;
            c.set_opt("out_dir", a.out_dir.as_deref().map(path_str))?;
            c.set_opt("steps", a.steps)?;
            c.set_opt("seed", a.seed)?;
            c.seed_from_env()?;
            commands::train(&c, a.resume.as_deref())
        }
        Command::Generate(a) => {
            let mut c = RunConfig::new("generate", GENERATE_KEYS);
            c.set("checkpoint", path_str(&a.checkpoint))?;
            c.set("context_file", path_str(&a.context_file))?;
            c.set("out", path_str(&a.out))?;
            c.set("beam", a.beam.unwrap_or(DEFAULT_BEAM).to_string())?;
            c.set("max_len", a.max_len.unwrap_or(DEFAULT_MAX_LEN).to_string())?;
            c.set_opt("seed", a.seed)?;
            c.set_opt("vocab", a.vocab.as_deref().map(path_str))?;
            c.seed_from_env()?;
            commands::generate_replies(&c)
        }
        Command::Eval(a) => {
            let mut c = RunConfig::new("eval", EVAL_KEYS);
            c.set("kl_eps", DEFAULT_KL_EPS.to_string())?;
            c.set("refs", path_str(&a.refs))?;
            c.set("hyps", path_str(&a.hyps))?;
            c.set("contexts", path_str(&a.contexts))?;
            c.set_opt("topic_model", a.topic_model.as_deref().map(path_str))?;
            c.set_opt("checkpoint", a.checkpoint.as_deref().map(path_str))?;
            c.set_opt("vocab", a.vocab.as_deref().map(path_str))?;
            c.set_opt("betas", a.betas)?;
            c.set_opt("samples", a.samples)?;
            c.set_opt("seed", a.seed)?;
            c.set("out", path_str(&a.out))?;
            c.seed_from_env()?;
            commands::eval(&c)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Divergence { .. } | Error::Evaluation(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
