use std::collections::HashSet;
use std::path::Path;

use crate::corpus::SPECIAL_SURFACES;
use crate::error::{Error, Result};

/// Function words: articles, pronouns, auxiliaries, prepositions, conjunctions,
/// common contractions and punctuation.
const BUILTIN: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "i", "me", "my", "mine", "myself", "you",
    "your", "yours", "yourself", "he", "him", "his", "himself", "she", "her", "hers", "herself",
    "it", "its", "itself", "we", "us", "our", "ours", "they", "them", "their", "theirs", "what",
    "which", "who", "whom", "whose", "am", "is", "are", "was", "were", "be", "been", "being",
    "have", "has", "had", "having", "do", "does", "did", "doing", "will", "would", "shall",
    "should", "can", "could", "may", "might", "must", "ought", "in", "on", "at", "by", "for",
    "with", "about", "against", "between", "into", "through", "during", "before", "after",
    "above", "below", "to", "from", "up", "down", "out", "off", "over", "under", "of", "and",
    "but", "or", "nor", "so", "if", "then", "than", "as", "because", "while", "until", "not",
    "no", "yes", "very", "too", "just", "also", "there", "here", "when", "where", "why", "how",
    "all", "any", "both", "each", "some", "such", "only", "own", "same", "again", "once", "'s",
    "'m", "'re", "'ve", "'ll", "'d", "n't", "s", "t", ".", ",", "!", "?", ";", ":", "'", "\"",
    "-", "--", "(", ")", "...", "`", "``", "''",
];

/// Set of functional words excluded from the topic space.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    pub fn builtin() -> Self {
        Self::from_words(BUILTIN.iter().copied())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            words: words.into_iter().map(str::to_string).collect(),
        }
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// Specials are always treated as functional.
    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word) || SPECIAL_SURFACES.contains(&word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_covers_function_words() {
        let s = Stopwords::builtin();
        for w in ["the", "you", "is", "of", ".", "n't"] {
            assert!(s.contains(w), "{w}");
        }
        assert!(!s.contains("pizza"));
        assert!(s.contains("<unk>"));
    }

    #[test]
    fn parse_skips_comments() {
        let s = Stopwords::parse("# header\nfoo\n\n  bar \n");
        assert_eq!(s.len(), 2);
        assert!(s.contains("bar"));
    }
}
