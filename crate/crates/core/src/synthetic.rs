//! Seeded generator of small topic-clustered dialog corpora.
//!
//! Every dialog is about one topic. Its utterances are drawn from shared
//! templates, with slots filled by that topic's words, generic verbs and
//! adjectives, and built-in function words. The topic words co-occur only
//! within their own topic, so PPMI and NMF recover clean topic clusters.

use crate::corpus::{RawDialog, EOU_SEPARATOR};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

const TOPIC_WORDS: [[&str; 10]; 5] = [
    ["sun", "rain", "cloud", "wind", "storm", "snow", "forecast", "umbrella", "thunder", "sky"],
    ["pizza", "pasta", "salad", "bread", "cheese", "soup", "dinner", "recipe", "kitchen", "sauce"],
    ["football", "goal", "match", "team", "coach", "player", "league", "ball", "stadium", "score"],
    ["guitar", "song", "band", "concert", "drum", "album", "singer", "piano", "melody", "stage"],
    ["flight", "hotel", "beach", "train", "passport", "ticket", "island", "museum", "map", "luggage"],
];

const VERBS: [&str; 5] = ["like", "love", "want", "need", "enjoy"];
const ADJECTIVES: [&str; 5] = ["good", "great", "nice", "bad", "fun"];

/// `$` is a topic word, `V` a generic verb, `A` a generic adjective.
const TEMPLATES: [&str; 8] = [
    "what do you V about the $ ?",
    "i V the $ and the $ .",
    "the $ is A .",
    "do you V $ ?",
    "yes , the $ was A and the $ too .",
    "i think the $ is A .",
    "we should V $ with the $ .",
    "how about $ ?",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub dialogs: usize,
    /// Number of topics, 1 to 5.
    pub topics: usize,
    /// Topic words used per topic, 1 to 10.
    pub words_per_topic: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dialogs: 500,
            topics: 3,
            words_per_topic: 10,
            min_turns: 3,
            max_turns: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dialogs: Vec<RawDialog>,
    /// Topic index of each dialog.
    pub topics: Vec<usize>,
}

impl SyntheticCorpus {
    /// Renders the corpus in the `__eou__`-separated line format.
    pub fn to_eou_lines(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogs {
            let line: Vec<String> = d
                .utterances
                .iter()
                .map(|u| format!("{} {EOU_SEPARATOR}", u.join(" ")))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Words of topic `k` as used by a generator with `words_per_topic`.
pub fn topic_words(k: usize, words_per_topic: usize) -> &'static [&'static str] {
    &TOPIC_WORDS[k][..words_per_topic]
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.topics == 0 || cfg.topics > TOPIC_WORDS.len() {
        return Err(Error::Config(format!("topics must be in 1..={}", TOPIC_WORDS.len())));
    }
    if cfg.words_per_topic == 0 || cfg.words_per_topic > TOPIC_WORDS[0].len() {
        return Err(Error::Config(format!("words_per_topic must be in 1..={}", TOPIC_WORDS[0].len())));
    }
    if cfg.min_turns < 2 || cfg.max_turns < cfg.min_turns {
        return Err(Error::Config("need 2 <= min_turns <= max_turns".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut dialogs = Vec::with_capacity(cfg.dialogs);
    let mut topics = Vec::with_capacity(cfg.dialogs);
    for i in 0..cfg.dialogs {
        let k = rng.below(cfg.topics);
        let words = topic_words(k, cfg.words_per_topic);
        let turns = cfg.min_turns + rng.below(cfg.max_turns - cfg.min_turns + 1);
        let utterances = (0..turns)
            .map(|_| {
                rng.choose(&TEMPLATES)
                    .split_whitespace()
                    .map(|slot| match slot {
                        "$" => rng.choose(words).to_string(),
                        "V" => rng.choose(&VERBS).to_string(),
                        "A" => rng.choose(&ADJECTIVES).to_string(),
                        w => w.to_string(),
                    })
                    .collect()
            })
            .collect();
        dialogs.push(RawDialog {
            utterances,
            source_id: format!("synthetic:{i}"),
        });
        topics.push(k);
    }
    Ok(SyntheticCorpus { dialogs, topics })
}
