//! Tokenization and the term vocabulary.
//!
//! The vocabulary is the closed set of terms a model can score. Every term
//! gets a dense [`TermId`]; anything outside the set has no id and is
//! dropped at lookup time.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TermId = u32;

/// Splits raw text into terms.
///
/// Implementations must be deterministic. A wordpiece tokenizer can be
/// plugged in here without touching the scoring code.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercasing tokenizer that splits on whitespace and punctuation.
///
/// Every character that is not alphanumeric acts as a separator and is
/// discarded.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Ordered set of lowercase terms with dense ids `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    term_to_id: HashMap<String, TermId>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit term list, keeping the given order.
    pub fn from_terms<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            terms: Vec::new(),
            term_to_id: HashMap::new(),
        };
        for term in terms {
            let term: String = term.into();
            if term.is_empty() || term.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary term {term:?} is empty or contains whitespace"
                )));
            }
            let term = term.to_lowercase();
            if vocab.term_to_id.contains_key(&term) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary term {term:?}")));
            }
            vocab.term_to_id.insert(term.clone(), vocab.terms.len() as TermId);
            vocab.terms.push(term);
        }
        Ok(vocab)
    }

    /// Counts tokens over `texts` and keeps those seen at least `min_count`
    /// times, ordered by descending count and then lexicographically.
    pub fn build<I, S>(texts: I, min_count: usize, tokenizer: &dyn Tokenizer) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_text = false;
        for text in texts {
            seen_text = true;
            for token in tokenizer.tokenize(text.as_ref()) {
                *counts.entry(token).or_default() += 1;
            }
        }
        if !seen_text {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if kept.is_empty() {
            return Err(Error::NoTermsSurvive);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocabulary::from_terms(kept.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Case-insensitive lookup; `None` for out-of-vocabulary terms.
    pub fn id(&self, term: &str) -> Option<TermId> {
        match self.term_to_id.get(term) {
            Some(id) => Some(*id),
            None => self.term_to_id.get(&term.to_lowercase()).copied(),
        }
    }

    pub fn term(&self, id: TermId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// Maps tokens to ids, dropping OOV tokens. Returns the ids and the
    /// number of dropped tokens.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<TermId>, usize) {
        let mut dropped = 0;
        let ids = tokens
            .iter()
            .filter_map(|t| {
                let id = self.id(t.as_ref());
                if id.is_none() {
                    dropped += 1;
                }
                id
            })
            .collect();
        (ids, dropped)
    }

    /// Checksum over the ordered term list. Binds indexes to the vocabulary
    /// they were built against.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update((self.terms.len() as u64).to_le_bytes());
        for term in &self.terms {
            hasher.update((term.len() as u64).to_le_bytes());
            hasher.update(term.as_bytes());
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}
