use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::RawDialog;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const EOU: TokenId = 2;
pub const SOS: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;

/// Surface forms of the reserved IDs 0-3, in ID order.
pub const SPECIAL_SURFACES: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "__eou__", "<s>"];

pub const DEFAULT_TOP_K: usize = 20_000;

/// Token <-> ID map. Non-special IDs are assigned by descending corpus
/// frequency with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
    freq: Vec<u64>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        Self::from_ranked(Vec::new())
    }

    fn from_ranked(ranked: Vec<(String, u64)>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_SURFACES.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; NUM_SPECIALS];
        for (tok, f) in ranked {
            tokens.push(tok);
            freq.push(f);
        }
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, id_of, freq }
    }

    /// Keeps the `top_k` most frequent tokens of the corpus.
    pub fn build(dialogs: &[RawDialog], top_k: usize) -> Result<Self> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for d in dialogs {
            for utt in &d.utterances {
                for tok in utt {
                    if SPECIAL_SURFACES.contains(&tok.as_str()) {
                        continue;
                    }
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, u64)> =
            counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(Self::from_ranked(ranked))
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// ID of `token`, or [`UNK`] when out of vocabulary.
    pub fn id(&self, token: &str) -> TokenId {
        self.id_of.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(SPECIAL_SURFACES[UNK as usize], String::as_str)
    }

    /// Corpus frequency; zero for specials and for vocabularies read from disk.
    pub fn freq(&self, id: TokenId) -> u64 {
        self.freq.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Non-special `(id, token)` pairs in ID order.
    pub fn words(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, t)| (i as TokenId, t.as_str()))
    }

    /// Four special-token header lines followed by one token per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != SPECIAL_SURFACES {
            return Err(Error::Format {
                what: "vocabulary file",
                reason: format!("expected special-token header {SPECIAL_SURFACES:?}"),
            });
        }
        let mut seen = std::collections::HashSet::new();
        let mut ranked = Vec::new();
        for (n, line) in lines[NUM_SPECIALS..].iter().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::Format {
                    what: "vocabulary file",
                    reason: format!("line {}: invalid token {tok:?}", n + NUM_SPECIALS + 1),
                });
            }
            if !seen.insert(tok) || SPECIAL_SURFACES.contains(&tok) {
                return Err(Error::Format {
                    what: "vocabulary file",
                    reason: format!("line {}: duplicate token {tok:?}", n + NUM_SPECIALS + 1),
                });
            }
            ranked.push((tok.to_string(), 0));
        }
        Ok(Self::from_ranked(ranked))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(lines: &[&[&str]]) -> RawDialog {
        RawDialog {
            utterances: lines
                .iter()
                .map(|u| u.iter().map(|s| s.to_string()).collect())
                .collect(),
            source_id: "t".into(),
        }
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = Vocabulary::build(&[], DEFAULT_TOP_K).unwrap();
        assert_eq!(v.size(), 4);
        assert_eq!(v, Vocabulary::specials_only());
    }

    #[test]
    fn top_k_keeps_most_frequent() {
        let v = Vocabulary::build(&[raw(&[&["a", "a", "b"]])], 1).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn zero_top_k_is_a_config_error() {
        assert!(matches!(Vocabulary::build(&[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&[raw(&[&["zeta", "alpha", "mid", "mid"]])], 10).unwrap();
        assert_eq!(v.token(4), "mid");
        assert_eq!(v.token(5), "alpha");
        assert_eq!(v.token(6), "zeta");
    }

    #[test]
    fn text_roundtrip_preserves_ids() {
        let v = Vocabulary::build(&[raw(&[&["x", "y", "y"], &["z"]])], 10).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        for (id, tok) in v.words() {
            assert_eq!(back.id(tok), id);
        }
        assert_eq!(back.size(), v.size());
    }

    #[test]
    fn rejects_missing_header() {
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }
}
