//! Okapi BM25 lexical baseline over the same candidates (answer + context).
//!
//! `score(d) = Σ_{t∈q} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))`
//! with the smoothed `IDF(t) = ln(1 + (N − df + 0.5) / (df + 0.5))`, which is
//! never negative.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerCandidate, AnswerId, Query};
use crate::error::{Error, Result};
use crate::scoring::top_k;
use crate::text::{TermId, Vocabulary};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

pub fn idf(num_docs: usize, doc_freq: usize) -> f64 {
    let n = num_docs as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    /// term → (answer id, term frequency), ascending by answer id.
    postings: BTreeMap<TermId, Vec<(AnswerId, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    num_docs: usize,
    pub k1: f64,
    pub b: f64,
    vocab_fingerprint: u64,
}

impl Bm25Index {
    /// Counts term frequencies over each candidate's full token sequence.
    pub fn build(candidates: &[AnswerCandidate], vocab_fingerprint: u64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<TermId, Vec<(AnswerId, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(candidates.len());
        for (position, c) in candidates.iter().enumerate() {
            if c.id as usize != position {
                return Err(Error::NonDenseAnswerId {
                    expected: position as AnswerId,
                    found: c.id,
                });
            }
            let tokens = c.tokens();
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<TermId, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, count) in tf {
                postings.entry(t).or_default().push((c.id, count));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        Ok(Bm25Index {
            postings,
            avg_doc_length: total as f64 / doc_lengths.len() as f64,
            num_docs: doc_lengths.len(),
            doc_lengths,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            vocab_fingerprint,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: AnswerId) -> Option<u32> {
        self.doc_lengths.get(id as usize).copied()
    }

    pub fn postings(&self, term: TermId) -> &[(AnswerId, u32)] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.vocab_fingerprint
    }

    /// Per-term BM25 weight for a document of length `doc_len`.
    pub fn term_weight(&self, tf: u32, doc_len: u32, doc_freq: usize) -> f64 {
        let tf = tf as f64;
        let avg = if self.avg_doc_length > 0.0 {
            self.avg_doc_length
        } else {
            1.0
        };
        let norm = self.k1 * (1.0 - self.b + self.b * doc_len as f64 / avg);
        idf(self.num_docs, doc_freq) * tf * (self.k1 + 1.0) / (tf + norm)
    }

    /// Top `k` answers; documents sharing no term with the query are left out.
    pub fn search(&self, query: &Query, k: usize) -> Result<Vec<(AnswerId, f64)>> {
        if query.vocab_fingerprint != self.vocab_fingerprint {
            return Err(Error::VocabularyMismatch {
                index: self.vocab_fingerprint,
                vocab: query.vocab_fingerprint,
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut acc: BTreeMap<AnswerId, f64> = BTreeMap::new();
        for &t in &query.token_ids {
            let list = self.postings(t);
            for &(doc, tf) in list {
                *acc.entry(doc).or_default() += self.term_weight(tf, self.doc_lengths[doc as usize], list.len());
            }
        }
        let scored = acc.into_iter().filter(|(_, s)| *s > 0.0).collect();
        Ok(top_k(scored, k))
    }

    /// Writes the index together with the vocabulary it was built against.
    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = Bm25File {
            terms: vocab.terms().to_vec(),
            index: self.clone(),
        };
        let json = serde_json::to_vec(&file).map_err(|source| Error::Json {
            path: path.to_owned(),
            line: 0,
            source,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Vocabulary)> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: Bm25File = serde_json::from_slice(&data).map_err(|source| Error::Json {
            path: path.to_owned(),
            line: 0,
            source,
        })?;
        let vocab = Vocabulary::from_terms(file.terms)?;
        if vocab.fingerprint() != file.index.vocab_fingerprint {
            return Err(Error::VocabularyMismatch {
                index: file.index.vocab_fingerprint,
                vocab: vocab.fingerprint(),
            });
        }
        Ok((file.index, vocab))
    }
}

#[derive(Serialize, Deserialize)]
struct Bm25File {
    terms: Vec<String>,
    index: Bm25Index,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{SimpleTokenizer, Tokenizer};
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> (Vocabulary, Vec<AnswerCandidate>) {
        let vocab = Vocabulary::build(texts.iter(), 1, &SimpleTokenizer).unwrap();
        let cands = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ids = vocab.encode_tokens(&SimpleTokenizer.tokenize(t)).0;
                AnswerCandidate::new(i as u32, vec![], ids, vec![]).unwrap()
            })
            .collect();
        (vocab, cands)
    }

    #[test]
    fn counts_term_frequencies() {
        let (vocab, cands) = corpus(&["a a b"]);
        let idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
        assert_eq!(idx.postings(vocab.id("a").unwrap()), &[(0, 2)]);
        assert_eq!(idx.postings(vocab.id("b").unwrap()), &[(0, 1)]);
        assert_eq!(idx.doc_length(0), Some(3));
        assert_eq!(idx, Bm25Index::build(&cands, vocab.fingerprint()).unwrap());
    }

    #[test]
    fn average_length() {
        let (vocab, cands) = corpus(&["a b", "a a a c"]);
        let idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
        assert!((idx.avg_doc_length() - 3.0).abs() < 1e-9);
        assert!(Bm25Index::build(&[], 0).is_err());
    }

    #[test]
    fn idf_single_document() {
        assert!((idf(1, 1) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((idf(1, 1) - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn two_document_hand_computation() {
        // docs "a b" (len 2) and "a a a" (len 3); avgdl 2.5; df(a) = 2, N = 2
        let (vocab, cands) = corpus(&["a b", "a a a"]);
        let idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
        let q = Query::new("a", &vocab, &SimpleTokenizer);
        let got = idx.search(&q, 10).unwrap();
        let idf_a = (1.0f64 + 0.5 / 2.5).ln();
        let d0 = idf_a * 1.0 * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / 2.5));
        let d1 = idf_a * 3.0 * 2.2 / (3.0 + 1.2 * (0.25 + 0.75 * 3.0 / 2.5));
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, 1);
        assert!((got[0].1 - d1).abs() < 1e-9);
        assert!((got[1].1 - d0).abs() < 1e-9);
    }

    #[test]
    fn absent_terms_excluded_and_fingerprint_checked() {
        let (vocab, cands) = corpus(&["a b", "c d"]);
        let idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
        let q = Query::new("b zzz", &vocab, &SimpleTokenizer);
        let got = idx.search(&q, 10).unwrap();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), vec![0]);
        let other = Vocabulary::from_terms(["x"]).unwrap();
        assert!(idx.search(&Query::new("x", &other, &SimpleTokenizer), 3).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let (vocab, cands) = corpus(&["a b", "c d a"]);
        let idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.json");
        idx.save(&vocab, &path).unwrap();
        let (back, v2) = Bm25Index::load(&path).unwrap();
        assert_eq!(back, idx);
        assert_eq!(v2, vocab);
    }

    proptest! {
        #[test]
        fn scores_nonnegative_and_monotone_in_tf(tf in 1u32..20, extra in 1u32..10, len in 20u32..40, df in 1usize..10, n in 10usize..50) {
            let (vocab, cands) = corpus(&["a"]);
            let mut idx = Bm25Index::build(&cands, vocab.fingerprint()).unwrap();
            idx.num_docs = n;
            idx.avg_doc_length = 25.0;
            let lo = idx.term_weight(tf, len, df);
            let hi = idx.term_weight(tf + extra, len, df);
            prop_assert!(lo >= 0.0);
            prop_assert!(hi >= lo);
        }
    }
}
