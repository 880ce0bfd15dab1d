//! Dialog ingestion, vocabulary construction, encoding and dataset splits.
//!
//! Corpus files hold one dialog per line; utterances are separated by the
//! literal token `__eou__` and tokens are whitespace separated.

mod vocab;

use std::path::Path;

pub use vocab::{
    TokenId, Vocabulary, DEFAULT_TOP_K, EOU, NUM_SPECIALS, PAD, SOS, SPECIAL_SURFACES, UNK,
};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const EOU_SEPARATOR: &str = "__eou__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    /// One dialog per line, `__eou__`-separated utterances.
    #[default]
    EouLines,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eou-lines" => Ok(CorpusFormat::EouLines),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub lowercase: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

/// A dialog before vocabulary encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawDialog {
    pub utterances: Vec<Vec<String>>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub dialogs: Vec<RawDialog>,
    pub skipped: usize,
}

/// Token IDs of one turn, always terminated by [`EOU`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance {
    tokens: Vec<TokenId>,
}

impl Utterance {
    /// Appends [`EOU`] unless already present. Empty input is rejected.
    pub fn new(mut tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.last() != Some(&EOU) {
            tokens.push(EOU);
        }
        if tokens.len() < 2 {
            return Err(Error::Contract("utterance has no tokens".into()));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Tokens without the trailing [`EOU`].
    pub fn words(&self) -> &[TokenId] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dialog {
    utterances: Vec<Utterance>,
    source_id: String,
}

/// One (context, reply) training or evaluation pair cut from a dialog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub context: Vec<Utterance>,
    pub reply: Utterance,
}

impl Dialog {
    pub fn new(utterances: Vec<Utterance>, source_id: impl Into<String>) -> Result<Self> {
        if utterances.len() < 2 {
            return Err(Error::Contract(format!(
                "a dialog needs at least 2 utterances, got {}",
                utterances.len()
            )));
        }
        Ok(Self {
            utterances,
            source_id: source_id.into(),
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn max_token(&self) -> TokenId {
        self.utterances
            .iter()
            .flat_map(|u| u.tokens.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Every reply position `m >= 1` with up to `max_context` preceding
    /// utterances (all of them when `None`).
    pub fn turns(&self, max_context: Option<usize>) -> Vec<Turn> {
        (1..self.utterances.len())
            .map(|m| {
                let start = max_context.map_or(0, |k| m.saturating_sub(k.max(1)));
                Turn {
                    context: self.utterances[start..m].to_vec(),
                    reply: self.utterances[m].clone(),
                }
            })
            .collect()
    }
}

/// Splits one corpus line into utterances, dropping empty ones.
pub fn parse_dialog_line(line: &str, lowercase: bool) -> Vec<Vec<String>> {
    let mut utterances = Vec::new();
    let mut current = Vec::new();
    for tok in line.split_whitespace() {
        if tok == EOU_SEPARATOR {
            if !current.is_empty() {
                utterances.push(std::mem::take(&mut current));
            }
        } else if lowercase {
            current.push(tok.to_lowercase());
        } else {
            current.push(tok.to_string());
        }
    }
    if !current.is_empty() {
        utterances.push(current);
    }
    utterances
}

/// Parses corpus text; lines with fewer than two utterances are skipped and counted.
pub fn parse_corpus(text: &str, source: &str, opts: LoadOptions) -> Result<LoadedCorpus> {
    let mut dialogs = Vec::new();
    let mut skipped = 0;
    for (n, line) in text.lines().enumerate() {
        let utterances = parse_dialog_line(line, opts.lowercase);
        if utterances.len() < 2 {
            skipped += 1;
            continue;
        }
        dialogs.push(RawDialog {
            utterances,
            source_id: format!("{source}:{}", n + 1),
        });
    }
    if dialogs.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{source} has no dialogs with at least 2 utterances"
        )));
    }
    Ok(LoadedCorpus { dialogs, skipped })
}

pub fn load_corpus(path: &Path, fmt: CorpusFormat, opts: LoadOptions) -> Result<LoadedCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match fmt {
        CorpusFormat::EouLines => parse_corpus(&text, &path.display().to_string(), opts),
    }
}

pub fn encode_utterance(words: &[String], vocab: &Vocabulary) -> Result<Utterance> {
    Utterance::new(words.iter().map(|w| vocab.id(w)).collect())
}

pub fn encode(dialog: &RawDialog, vocab: &Vocabulary) -> Result<Dialog> {
    let utterances = dialog
        .utterances
        .iter()
        .map(|u| encode_utterance(u, vocab))
        .collect::<Result<Vec<_>>>()?;
    Dialog::new(utterances, dialog.source_id.clone())
}

pub fn encode_all(dialogs: &[RawDialog], vocab: &Vocabulary) -> Result<Vec<Dialog>> {
    dialogs.iter().map(|d| encode(d, vocab)).collect()
}

/// Surface tokens of an utterance, without the trailing `__eou__`.
pub fn decode_utterance(utt: &Utterance, vocab: &Vocabulary) -> Vec<String> {
    utt.words().iter().map(|&id| vocab.token(id).to_string()).collect()
}

pub fn decode(dialog: &Dialog, vocab: &Vocabulary) -> RawDialog {
    RawDialog {
        utterances: dialog
            .utterances
            .iter()
            .map(|u| decode_utterance(u, vocab))
            .collect(),
        source_id: dialog.source_id.clone(),
    }
}

/// Deterministic shuffled partition into (train, valid, test).
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(Error::Config(format!(
            "split ratios must be in [0,1] and sum to 1, got {ratios:?}"
        )));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_line_gives_two_utterances() {
        let c = parse_corpus("hi __eou__ hello __eou__", "mem", LoadOptions::default()).unwrap();
        assert_eq!(c.dialogs.len(), 1);
        assert_eq!(c.dialogs[0].utterances, vec![vec!["hi"], vec!["hello"]]);
        assert_eq!(c.skipped, 0);
    }

    #[test]
    fn single_utterance_line_is_skipped() {
        let res = parse_corpus("hi __eou__", "mem", LoadOptions::default());
        assert!(matches!(res, Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn malformed_line_counted() {
        let text = "a b __eou__ c __eou__\nlonely __eou__\nd __eou__ e __eou__ f\n";
        let c = parse_corpus(text, "mem", LoadOptions::default()).unwrap();
        assert_eq!(c.dialogs.len(), 2);
        assert_eq!(c.skipped, 1);
        assert_eq!(c.dialogs[1].utterances.len(), 3);
        assert_eq!(c.dialogs[1].source_id, "mem:3");
    }

    #[test]
    fn lowercasing_is_optional() {
        let line = "Hi __eou__ THERE __eou__";
        let on = parse_corpus(line, "m", LoadOptions::default()).unwrap();
        let off = parse_corpus(line, "m", LoadOptions { lowercase: false }).unwrap();
        assert_eq!(on.dialogs[0].utterances[0], vec!["hi"]);
        assert_eq!(off.dialogs[0].utterances[0], vec!["Hi"]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let res = load_corpus(
            Path::new("/nonexistent/corpus.txt"),
            CorpusFormat::EouLines,
            LoadOptions::default(),
        );
        assert!(matches!(res, Err(Error::Io { .. })));
    }

    #[test]
    fn encode_maps_unknown_to_unk_and_terminates() {
        let c = parse_corpus("a b __eou__ b c __eou__", "m", LoadOptions::default()).unwrap();
        let vocab = Vocabulary::build(&c.dialogs, 2).unwrap();
        let d = encode(&c.dialogs[0], &vocab).unwrap();
        assert_eq!(d.utterances()[0].tokens(), &[vocab.id("a"), vocab.id("b"), EOU]);
        assert_eq!(vocab.id("c"), UNK);
        assert_eq!(d.utterances()[1].tokens(), &[vocab.id("b"), UNK, EOU]);
        let back = decode(&d, &vocab);
        assert_eq!(back.utterances[1], vec!["b", "<unk>"]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b, c) = split(&items, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert_eq!(split(&items, [0.8, 0.1, 0.1], 3).unwrap(), (a, b, c));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(matches!(split(&[1, 2], [0.5, 0.5, 0.1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn turns_respect_context_cap() {
        let u = |t: u32| Utterance::new(vec![t]).unwrap();
        let d = Dialog::new(vec![u(4), u(5), u(6), u(7)], "x").unwrap();
        let all = d.turns(None);
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].context.len(), 3);
        let capped = d.turns(Some(2));
        assert_eq!(capped[2].context, vec![u(5), u(6)]);
        assert_eq!(capped[2].reply, u(7));
    }
}
