use std::collections::BTreeMap;

use super::Stopwords;
use crate::corpus::{Dialog, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_WINDOW: usize = 5;

/// Sparse word-by-context PPMI matrix over content words.
///
/// Rows and columns share one index (content words in vocabulary ID order).
/// Only strictly positive cells are stored; each row is sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmiMatrix {
    words: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
}

/// Content-word index of a vocabulary: `None` for specials and stopwords.
pub(crate) fn content_index(vocab: &Vocabulary, stopwords: &Stopwords) -> (Vec<String>, Vec<Option<usize>>) {
    let mut words = Vec::new();
    let mut by_id = vec![None; vocab.size()];
    for (id, tok) in vocab.words() {
        if !stopwords.contains(tok) {
            by_id[id as usize] = Some(words.len());
            words.push(tok.to_string());
        }
    }
    (words, by_id)
}

impl PpmiMatrix {
    /// Counts symmetric co-occurrences within `window` content words of each
    /// other inside an utterance, then applies `max(log(p(w,k) / (p(w) p(k))), 0)`.
    pub fn build(
        dialogs: &[Dialog],
        vocab: &Vocabulary,
        stopwords: &Stopwords,
        window: usize,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("co-occurrence window must be >= 1".into()));
        }
        let (words, by_id) = content_index(vocab, stopwords);
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        let mut seen_content = false;
        for d in dialogs {
            for utt in d.utterances() {
                let seq: Vec<usize> = utt
                    .tokens()
                    .iter()
                    .filter_map(|&t| by_id.get(t as usize).copied().flatten())
                    .collect();
                seen_content |= !seq.is_empty();
                for i in 0..seq.len() {
                    for j in i + 1..seq.len().min(i + window + 1) {
                        *counts.entry((seq[i], seq[j])).or_default() += 1;
                        *counts.entry((seq[j], seq[i])).or_default() += 1;
                    }
                }
            }
        }
        if !seen_content {
            return Err(Error::EmptyCorpus(
                "no content words in corpus; PPMI matrix would be empty".into(),
            ));
        }

        let n = words.len();
        let mut row_tot = vec![0u64; n];
        let mut col_tot = vec![0u64; n];
        let mut total = 0u64;
        for (&(i, j), &c) in &counts {
            row_tot[i] += c;
            col_tot[j] += c;
            total += c;
        }
        let mut rows = vec![Vec::new(); n];
        for (&(i, j), &c) in &counts {
            let pmi = ((c as f64) * (total as f64) / ((row_tot[i] as f64) * (col_tot[j] as f64))).ln();
            if pmi > 0.0 {
                rows[i].push((j, pmi));
            }
        }
        Ok(Self { words, rows })
    }

    pub fn from_parts(words: Vec<String>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if words.len() != rows.len() {
            return Err(Error::Contract("row count differs from word count".into()));
        }
        for row in &rows {
            if row.iter().any(|&(j, v)| j >= words.len() || !(v > 0.0)) {
                return Err(Error::Contract("PPMI cells must be positive and in range".into()));
            }
        }
        Ok(Self { words, rows })
    }

    pub fn dim(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn to_dense(&self) -> Tensor {
        let n = self.dim();
        let mut t = Tensor::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                t.set(i, j, v);
            }
        }
        t
    }

    pub fn squared_norm(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, v)| v * v).sum()
    }
}
