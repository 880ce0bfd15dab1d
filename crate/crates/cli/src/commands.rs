use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thredkit::corpus::{
    encode_all, encode_utterance, load_corpus, parse_dialog_line, CorpusFormat, LoadOptions, Turn, Utterance,
    Vocabulary, EOU_SEPARATOR,
};
use thredkit::decode::generate;
use thredkit::metrics::{distinct_n, perplexity, topic_div, MetricsReport};
use thredkit::model::{Checkpoint, EpochLog, Model, ModelConfig, TrainConfig, Trainer, Variant};
use thredkit::numerics::SeededRng;
use thredkit::topics::{nmf_factorize, NmfConfig, PpmiMatrix, Stopwords, TopicModel, TopicProjection};
use thredkit::{Error, Result};

use crate::config::{io_error, sidecar, RunConfig};

pub const LOG_HEADER: &str = "step,ce,kl_global,topic_div";
pub const CHECKPOINT_FILE: &str = "checkpoint.thrd";
pub const BEST_FILE: &str = "best.thrd";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "run.cfg";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn lowercase(cfg: &RunConfig) -> Result<LoadOptions> {
    Ok(LoadOptions {
        lowercase: cfg.get("lowercase")?,
    })
}

pub fn build_vocab(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let corpus = load_corpus(&cfg.path("corpus")?, CorpusFormat::EouLines, lowercase(cfg)?)?;
    let vocab = Vocabulary::build(&corpus.dialogs, cfg.get("top_k")?)?;
    info!(
        "{} dialogs ({} skipped), vocabulary of {} tokens",
        corpus.dialogs.len(),
        corpus.skipped,
        vocab.size()
    );
    vocab.save(&out)?;
    cfg.write(&sidecar(&out))
}

pub fn topics(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let vocab = Vocabulary::load(&cfg.path("vocab")?)?;
    let corpus = load_corpus(&cfg.path("corpus")?, CorpusFormat::EouLines, lowercase(cfg)?)?;
    let dialogs = encode_all(&corpus.dialogs, &vocab)?;
    let stopwords = match cfg.opt_path("stopwords") {
        Some(p) => Stopwords::parse(&read_text(&p)?),
        None => Stopwords::builtin(),
    };
    let m = PpmiMatrix::build(&dialogs, &vocab, &stopwords, cfg.get("window")?)?;
    let nmf = NmfConfig {
        rank: cfg.get("rank")?,
        iters: cfg.get("iters")?,
        tol: cfg.get("tol")?,
        seed: cfg.get("seed")?,
    };
    let (model, report) = nmf_factorize(&m, &nmf)?;
    println!(
        "relative frobenius error {:.6} after {} iterations",
        report.relative_error, report.iterations
    );
    model.save(&out)?;
    cfg.write(&sidecar(&out))
}

fn load_dialogs(path: &Path, vocab: &Vocabulary, opts: LoadOptions) -> Result<Vec<thredkit::corpus::Dialog>> {
    let corpus = load_corpus(path, CorpusFormat::EouLines, opts)?;
    if corpus.skipped > 0 {
        warn!("{}: skipped {} lines with fewer than 2 utterances", path.display(), corpus.skipped);
    }
    encode_all(&corpus.dialogs, vocab)
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.step, e.ce, e.kl_global, e.topic_div);
    }
    out
}

fn absolute(p: &Path) -> String {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let variant: Variant = cfg.get::<String>("variant")?.parse()?;
    let out_dir = cfg.path("out_dir")?;
    let vocab_path = cfg.path("vocab")?;
    let topic_path = cfg.opt_path("topic_model");
    if variant.has_topic() && topic_path.is_none() {
        return Err(Error::Config("thred requires topic_model (--topic-model)".into()));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let opts = lowercase(cfg)?;
    let train = load_dialogs(&cfg.path("corpus")?, &vocab, opts)?;
    let valid = match cfg.opt_path("valid_corpus") {
        Some(p) => load_dialogs(&p, &vocab, opts)?,
        None => Vec::new(),
    };
    let topic_model = topic_path.as_deref().map(TopicModel::load).transpose()?;
    let topics = topic_model.as_ref().map(|t| TopicProjection::new(t, &vocab));

    let seed: u64 = cfg.get("seed")?;
    let tc = TrainConfig {
        lr: cfg.get("lr")?,
        steps: cfg.get("steps")?,
        batch_size: cfg.get("batch_size")?,
        seed,
        clip_norm: cfg.get("clip_norm")?,
        epoch_steps: cfg.opt("epoch_steps")?,
        max_context: cfg.opt("max_context")?,
        kl_eps: cfg.get("kl_eps")?,
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    cfg.write(&out_dir.join(CONFIG_FILE))?;

    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.variant != variant {
                return Err(Error::Config(format!(
                    "checkpoint holds a {} model but variant is {variant}",
                    ckpt.config.variant
                )));
            }
            if ckpt.config.vocab_size != vocab.size() {
                return Err(Error::Config(format!(
                    "checkpoint vocabulary has {} tokens, {} has {}",
                    ckpt.config.vocab_size,
                    vocab_path.display(),
                    vocab.size()
                )));
            }
            info!("resuming from {} at step {}", path.display(), ckpt.global_step);
            Trainer::resume(&ckpt, tc, &train, &valid, topics)?
        }
        None => {
            let mc = ModelConfig {
                variant,
                vocab_size: vocab.size(),
                embed_dim: cfg.get("embed_dim")?,
                hidden_dim: cfg.get("hidden_dim")?,
                latent_dim: if variant.has_latent() { cfg.get("latent_dim")? } else { 0 },
                topic_dim: topics.as_ref().map_or(0, |t| t.rank()),
                topic_weight: cfg.get("topic_weight")?,
                kl_anneal_steps: cfg.get("kl_anneal_steps")?,
            };
            let model = Model::init(mc, &mut SeededRng::new(seed))?;
            Trainer::new(model, tc, &train, &valid, topics)?
        }
    };
    info!("{} training turns, {variant}", trainer.num_train_turns());

    let outcome = trainer.run();
    let with_meta = |mut ck: Checkpoint| {
        ck.meta.insert("vocab".into(), absolute(&vocab_path));
        if let Some(p) = &topic_path {
            ck.meta.insert("topic_model".into(), absolute(p));
        }
        ck
    };
    write_text(&out_dir.join(LOG_FILE), &log_csv(trainer.log()))?;
    // on divergence this is the last good state; the failed step is never applied
    with_meta(trainer.checkpoint()).save(&out_dir.join(CHECKPOINT_FILE))?;
    if let Some(best) = trainer.best_checkpoint() {
        with_meta(best.clone()).save(&out_dir.join(BEST_FILE))?;
    }
    outcome
}

fn parse_context(line: &str, n: usize, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let utts = parse_dialog_line(line, true);
    if utts.is_empty() {
        return Err(Error::Config(format!("context line {} is empty", n + 1)));
    }
    utts.iter().map(|u| encode_utterance(u, vocab)).collect()
}

fn checkpoint_vocab(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Vocabulary> {
    let path = match cfg.opt_path("vocab") {
        Some(p) => p,
        None => ckpt
            .meta
            .get("vocab")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("checkpoint records no vocabulary; pass --vocab".into()))?,
    };
    let vocab = Vocabulary::load(&path)?;
    if vocab.size() != ckpt.config.vocab_size {
        return Err(Error::Config(format!(
            "{} has {} tokens but the checkpoint expects {}",
            path.display(),
            vocab.size(),
            ckpt.config.vocab_size
        )));
    }
    Ok(vocab)
}

fn line_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn generate_replies(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let ckpt = Checkpoint::load(&cfg.path("checkpoint")?)?;
    let vocab = checkpoint_vocab(cfg, &ckpt)?;
    let model = ckpt.model()?;
    let beam: usize = cfg.get("beam")?;
    let max_len: usize = cfg.get("max_len")?;
    let seed: u64 = cfg.get("seed")?;
    let text = read_text(&cfg.path("context_file")?)?;
    let mut replies = String::new();
    for (n, line) in text.lines().enumerate() {
        let context = parse_context(line, n, &vocab)?;
        let hyp = generate(&model, &context, beam, max_len, line_seed(seed, n))?;
        let words: Vec<&str> = hyp.words().iter().map(|&t| vocab.token(t)).collect();
        replies.push_str(&words.join(" "));
        replies.push('\n');
    }
    write_text(&out, &replies)?;
    cfg.write(&sidecar(&out))
}

fn response_tokens(line: &str) -> Vec<String> {
    line.split_whitespace()
        .filter(|t| *t != EOU_SEPARATOR)
        .map(str::to_lowercase)
        .collect()
}

pub fn parse_betas(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|b| {
            b.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::Config(format!("bad beta {b:?}")))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let hyps_text = read_text(&cfg.path("hyps")?)?;
    let refs_text = read_text(&cfg.path("refs")?)?;
    let ctx_text = read_text(&cfg.path("contexts")?)?;
    let hyps: Vec<Vec<String>> = hyps_text.lines().map(response_tokens).collect();
    let refs: Vec<&str> = refs_text.lines().collect();
    let contexts: Vec<&str> = ctx_text.lines().collect();
    if hyps.len() != refs.len() || hyps.len() != contexts.len() {
        return Err(Error::Config(format!(
            "line counts differ: {} hyps, {} refs, {} contexts",
            hyps.len(),
            refs.len(),
            contexts.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Config("no responses to evaluate".into()));
    }
    let betas = parse_betas(&cfg.get::<String>("betas")?)?;
    let dist1 = distinct_n(&hyps, 1)?;
    let dist2 = distinct_n(&hyps, 2)?;

    let topic = match cfg.opt_path("topic_model") {
        Some(p) => {
            let tm = TopicModel::load(&p)?;
            let ctx_words: Vec<Vec<String>> = contexts
                .iter()
                .map(|l| parse_dialog_line(l, true).concat())
                .collect();
            Some(topic_div(&ctx_words, &hyps, &tm, cfg.get("kl_eps")?)?)
        }
        None => None,
    };

    let ppl = match cfg.opt_path("checkpoint") {
        Some(p) => {
            let ckpt = Checkpoint::load(&p)?;
            let vocab = checkpoint_vocab(cfg, &ckpt)?;
            let model = ckpt.model()?;
            let turns = contexts
                .iter()
                .zip(&refs)
                .enumerate()
                .map(|(n, (c, r))| {
                    let words = response_tokens(r);
                    if words.is_empty() {
                        return Err(Error::Config(format!("reference line {} is empty", n + 1)));
                    }
                    Ok(Turn {
                        context: parse_context(c, n, &vocab)?,
                        reply: encode_utterance(&words, &vocab)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(perplexity(&model, &turns, cfg.get("samples")?, cfg.get("seed")?)?)
        }
        None => None,
    };

    let report = MetricsReport::new(dist1, dist2, topic, ppl, &betas, hyps.len())?;
    let mut json = report.to_json();
    json.push('\n');
    write_text(&out, &json)?;
    cfg.write(&sidecar(&out))
}
