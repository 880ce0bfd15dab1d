#![allow(dead_code)]

use std::collections::BTreeMap;

use thredkit::corpus::{encode_all, split, Dialog, TokenId, Vocabulary, EOU};
use thredkit::decode::{masked_log_probs, StepModel};
use thredkit::model::{ModelConfig, TrainConfig, Variant};
use thredkit::synthetic::{generate, SyntheticConfig};
use thredkit::topics::{PpmiMatrix, Stopwords};

/// Reference (Dist1, Dist2, TopicDiv, F1_d1, F1_d2, F.5_d1, F.5_d2, F1.5_d1, F1.5_d2) rows.
pub const UBUNTU: [(&str, [f64; 9]); 4] = [
    ("seq2seq", [0.7870, 0.9564, 0.2723, 0.7562, 0.8265, 0.7744, 0.8998, 0.7450, 0.7855]),
    ("hred", [0.7093, 0.9025, 0.2382, 0.7346, 0.8262, 0.7192, 0.8704, 0.7448, 0.8002]),
    ("vhred", [0.8018, 0.9702, 0.2908, 0.7527, 0.8194, 0.7814, 0.9037, 0.7353, 0.7732]),
    ("thred", [0.8008, 0.9712, 0.2750, 0.7610, 0.8302, 0.7844, 0.9094, 0.7467, 0.7863]),
];

#[allow(clippy::approx_constant)]
pub const DAILY: [(&str, [f64; 9]); 4] = [
    ("seq2seq", [0.6044, 0.9699, 0.3276, 0.6366, 0.7942, 0.6169, 0.8911, 0.6499, 0.7425]),
    ("hred", [0.6349, 0.9229, 0.3334, 0.6504, 0.7741, 0.6410, 0.8570, 0.6565, 0.7289]),
    ("vhred", [0.6310, 0.9165, 0.3351, 0.6475, 0.7707, 0.6375, 0.8520, 0.6541, 0.7262]),
    ("thred", [0.6604, 0.9273, 0.3101, 0.6748, 0.7912, 0.6661, 0.8676, 0.6805, 0.7489]),
];

/// Column offsets of the F cells for each beta, as (dist1 column, dist2 column).
pub const F_COLUMNS: [(f64, usize, usize); 3] = [(1.0, 3, 4), (0.5, 5, 6), (1.5, 7, 8)];

pub const PPMI_LOG: [f64; 10] = [
    6.8266e-06, 0.0916, 0.0739, 0.0047, 0.1112, 0.0896, 0.0256, 0.0008, 0.0881, 0.1065,
];
pub const NMF_LOG: [f64; 10] = [0.0133, 0.0106, 0.0102, 0.0035, 0.0093, 0.0088, 0.0082, 0.0010, 0.0092, 0.0107];

pub struct DeskData {
    pub vocab: Vocabulary,
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
    pub ppmi: PpmiMatrix,
}

/// 500 three-topic dialogs split 80/10/10, with the PPMI matrix of the training part.
pub fn desk_data(seed: u64) -> DeskData {
    let syn = generate(&SyntheticConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    let vocab = Vocabulary::build(&syn.dialogs, 1000).unwrap();
    let dialogs = encode_all(&syn.dialogs, &vocab).unwrap();
    let (train, valid, test) = split(&dialogs, [0.8, 0.1, 0.1], seed).unwrap();
    let ppmi = PpmiMatrix::build(&train, &vocab, &Stopwords::builtin(), 5).unwrap();
    DeskData {
        vocab,
        train,
        valid,
        test,
        ppmi,
    }
}

pub fn desk_model(variant: Variant, vocab_size: usize, topic_dim: usize) -> ModelConfig {
    ModelConfig {
        variant,
        vocab_size,
        embed_dim: 16,
        hidden_dim: 16,
        latent_dim: 8,
        topic_dim: if variant.has_topic() { topic_dim } else { 0 },
        topic_weight: 1.0,
        kl_anneal_steps: 1000,
    }
}

pub fn desk_train(seed: u64, steps: u64, epoch_steps: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        steps,
        batch_size: 8,
        seed,
        epoch_steps: Some(epoch_steps),
        ..Default::default()
    }
}

/// Every sequence the decoder can emit within `max_len` tokens, with its
/// cumulative log-probability; sequences stop at [`EOU`].
pub fn enumerate<M: StepModel>(m: &M, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0, m.initial_state())];
    while let Some((toks, lp, state)) = stack.pop() {
        let prev = toks.last().copied().unwrap_or_else(|| m.start_token());
        let (logits, next) = m.logits(&state, prev).unwrap();
        for (t, l) in masked_log_probs(&logits, m.banned()).into_iter().enumerate() {
            if l == f64::NEG_INFINITY {
                continue;
            }
            let mut seq = toks.clone();
            seq.push(t as TokenId);
            if t as TokenId == EOU || seq.len() == max_len {
                out.push((seq, lp + l));
            } else {
                stack.push((seq, lp + l, next.clone()));
            }
        }
    }
    out
}

/// Highest length-normalised score among [`enumerate`]'s sequences.
pub fn exhaustive_best<M: StepModel>(m: &M, max_len: usize) -> (Vec<TokenId>, f64) {
    enumerate(m, max_len)
        .into_iter()
        .map(|(s, lp)| {
            let score = lp / s.len() as f64;
            (s, score)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Brute-force PPMI over raw string utterances: enumerate every ordered pair
/// of content-word positions at distance <= `window`.
pub fn ppmi_oracle(utterances: &[Vec<String>], stopwords: &Stopwords, window: usize) -> BTreeMap<(String, String), f64> {
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    for u in utterances {
        let content: Vec<&String> = u.iter().filter(|w| !stopwords.contains(w.as_str())).collect();
        for i in 0..content.len() {
            for j in 0..content.len() {
                if i != j && i.abs_diff(j) <= window {
                    *counts.entry((content[i].clone(), content[j].clone())).or_default() += 1.0;
                }
            }
        }
    }
    let total: f64 = counts.values().sum();
    let mut row: BTreeMap<&str, f64> = BTreeMap::new();
    let mut col: BTreeMap<&str, f64> = BTreeMap::new();
    for ((a, b), c) in &counts {
        *row.entry(a).or_default() += c;
        *col.entry(b).or_default() += c;
    }
    counts
        .iter()
        .filter_map(|((a, b), &c)| {
            let pmi = (c / total / ((row[a.as_str()] / total) * (col[b.as_str()] / total))).ln();
            (pmi > 0.0).then(|| ((a.clone(), b.clone()), pmi))
        })
        .collect()
}
