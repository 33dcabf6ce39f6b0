//! Offline term scoring and the inverted index.
//!
//! Query term embeddings do not depend on the query, so the contribution
//! `ln(φ(y_t) + 1)` of every vocabulary term `t` can be computed once per
//! answer at indexing time. Only strictly positive contributions are kept.
//! A query is then scored by looking up its terms and summing.

mod persist;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use persist::{HEADER_LEN, INDEX_MAGIC, INDEX_VERSION};

use crate::corpus::{AnswerId, Query};
use crate::encoder::AnswerEncoding;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scoring::{term_contribution, top_k, MatchScope, QueryTermTable};
use crate::text::{TermId, Vocabulary};

/// Largest truncation examined for the sparsity/accuracy trade-off; `0`
/// keeps every active term.
pub const DEFAULT_TOP_K: usize = 2000;

/// Cached contributions of every active vocabulary term for one answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTermVector {
    pub answer_id: AnswerId,
    /// Sorted by term id; every score is `> 0`.
    pub entries: Vec<(TermId, f32)>,
}

impl SparseTermVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, term: TermId) -> Option<f32> {
        self.entries
            .binary_search_by_key(&term, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// The `k` highest-scoring terms, ties by ascending term id.
    pub fn top_entries(&self, k: usize) -> Vec<(TermId, f32)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        sorted.truncate(k);
        sorted
    }

    /// [`top_entries`](Self::top_entries) decoded to term strings.
    pub fn top_terms(&self, vocab: &Vocabulary, k: usize) -> Result<Vec<(String, f32)>> {
        self.top_entries(k)
            .into_iter()
            .map(|(t, s)| {
                let term = vocab.term(t).ok_or(Error::TokenOutOfRange {
                    id: t,
                    vocab_size: vocab.len(),
                })?;
                Ok((term.to_owned(), s))
            })
            .collect()
    }
}

/// Scores every vocabulary term against `encoding` and keeps the active
/// ones, optionally only the `top_k` largest (`0` keeps all).
pub fn build_answer_vector(
    encoding: &AnswerEncoding,
    table: &QueryTermTable,
    top_k: usize,
    scope: MatchScope,
) -> Result<SparseTermVector> {
    if encoding.dim() != table.dim() {
        return Err(Error::DimMismatch {
            left: table.dim(),
            right: encoding.dim(),
        });
    }
    let positions = scope.positions(encoding);
    if positions.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let vocab_size = table.vocab_size();
    let mut best = vec![f64::NEG_INFINITY; vocab_size];
    for j in positions {
        let s = encoding.vector(j);
        for (t, b) in best.iter_mut().enumerate() {
            let v = dot(table.embedding(t as TermId), s);
            if v > *b {
                *b = v;
            }
        }
    }
    let mut entries: Vec<(TermId, f32)> = best
        .iter()
        .enumerate()
        .filter_map(|(t, &y)| {
            let score = term_contribution(y, table.bias) as f32;
            (score > 0.0).then_some((t as TermId, score))
        })
        .collect();
    if top_k > 0 && entries.len() > top_k {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(top_k);
        entries.sort_by_key(|e| e.0);
    }
    Ok(SparseTermVector {
        answer_id: encoding.answer_id,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub answer_id: AnswerId,
    pub score: f32,
}

/// Term id → postings sorted by answer id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<TermId, Vec<Posting>>,
    num_answers: u32,
    vocab_fingerprint: u64,
    top_k: u32,
}

impl InvertedIndex {
    /// Transposes per-answer vectors into posting lists. Vector answer ids
    /// must be exactly `0..vectors.len()` (in any order).
    pub fn from_vectors(vectors: &[SparseTermVector], vocab_fingerprint: u64, top_k: usize) -> Result<Self> {
        let n = vectors.len();
        let mut by_id: Vec<Option<&SparseTermVector>> = vec![None; n];
        for v in vectors {
            let slot = by_id.get_mut(v.answer_id as usize).ok_or(Error::NonDenseAnswerId {
                expected: n as AnswerId,
                found: v.answer_id,
            })?;
            if slot.replace(v).is_some() {
                return Err(Error::DuplicateAnswerId(v.answer_id));
            }
        }
        let mut postings: BTreeMap<TermId, Vec<Posting>> = BTreeMap::new();
        for v in by_id.into_iter().flatten() {
            for &(term, score) in &v.entries {
                debug_assert!(score > 0.0);
                postings.entry(term).or_default().push(Posting {
                    answer_id: v.answer_id,
                    score,
                });
            }
        }
        Ok(InvertedIndex {
            postings,
            num_answers: n as u32,
            vocab_fingerprint,
            top_k: top_k as u32,
        })
    }

    pub fn num_answers(&self) -> usize {
        self.num_answers as usize
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.vocab_fingerprint
    }

    pub fn top_k(&self) -> usize {
        self.top_k as usize
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        self.postings.get(&term).map_or(&[], Vec::as_slice)
    }

    pub fn num_terms_with_postings(&self) -> usize {
        self.postings.len()
    }

    pub fn num_postings(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    /// Mean number of active terms per answer.
    pub fn mean_terms_per_answer(&self) -> f64 {
        if self.num_answers == 0 {
            return 0.0;
        }
        self.num_postings() as f64 / self.num_answers as f64
    }

    fn check_query(&self, query: &Query) -> Result<()> {
        if query.vocab_fingerprint != self.vocab_fingerprint {
            return Err(Error::VocabularyMismatch {
                index: self.vocab_fingerprint,
                vocab: query.vocab_fingerprint,
            });
        }
        Ok(())
    }

    /// Sums cached scores over query tokens (with multiplicity). Answers
    /// with no accumulated score are left out.
    pub fn query(&self, query: &Query, k: usize) -> Result<Vec<(AnswerId, f64)>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut acc = vec![0.0f64; self.num_answers as usize];
        let mut touched = Vec::new();
        for &t in &query.token_ids {
            for p in self.postings(t) {
                let slot = &mut acc[p.answer_id as usize];
                if *slot == 0.0 {
                    touched.push(p.answer_id);
                }
                *slot += p.score as f64;
            }
        }
        let scored = touched
            .into_iter()
            .map(|id| (id, acc[id as usize]))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        Ok(top_k(scored, k))
    }

    /// Rebuilds one answer's sparse vector from the postings.
    pub fn answer_vector(&self, answer_id: AnswerId) -> Result<SparseTermVector> {
        if answer_id >= self.num_answers {
            return Err(Error::UnknownAnswer(answer_id));
        }
        let entries = self
            .postings
            .iter()
            .filter_map(|(&t, list)| {
                list.binary_search_by_key(&answer_id, |p| p.answer_id)
                    .ok()
                    .map(|i| (t, list[i].score))
            })
            .collect();
        Ok(SparseTermVector { answer_id, entries })
    }

    /// Highest-scoring terms of one answer, decoded to strings.
    pub fn top_k_terms(&self, vocab: &Vocabulary, answer_id: AnswerId, k: usize) -> Result<Vec<(String, f32)>> {
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::VocabularyMismatch {
                index: self.vocab_fingerprint,
                vocab: vocab.fingerprint(),
            });
        }
        self.answer_vector(answer_id)?.top_terms(vocab, k)
    }
}

/// Builds sparse vectors for every answer in parallel and transposes them.
/// The result does not depend on the number of worker threads.
pub fn build_index(
    encodings: &[AnswerEncoding],
    table: &QueryTermTable,
    top_k: usize,
    scope: MatchScope,
    vocab_fingerprint: u64,
) -> Result<InvertedIndex> {
    let vectors = encodings
        .par_iter()
        .map(|enc| build_answer_vector(enc, table, top_k, scope))
        .collect::<Result<Vec<_>>>()?;
    InvertedIndex::from_vectors(&vectors, vocab_fingerprint, top_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::scoring::{sparse_feature, term_match};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_encoding(id: AnswerId, n: usize, d: usize, rng: &mut ChaCha8Rng) -> AnswerEncoding {
        AnswerEncoding::new(id, Matrix::random_normal(n, d, 0.5, rng)).unwrap()
    }

    #[test]
    fn very_negative_bias_empties_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = QueryTermTable::random(30, 4, 1.0, -1e9, &mut rng);
        let enc = random_encoding(0, 5, 4, &mut rng);
        assert!(build_answer_vector(&enc, &table, 0, MatchScope::FullSequence)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn truncation_at_vocab_size_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = QueryTermTable::random(30, 4, 1.0, 0.2, &mut rng);
        let enc = random_encoding(0, 5, 4, &mut rng);
        let full = build_answer_vector(&enc, &table, 0, MatchScope::FullSequence).unwrap();
        let capped = build_answer_vector(&enc, &table, 30, MatchScope::FullSequence).unwrap();
        assert_eq!(full, capped);
        let top3 = build_answer_vector(&enc, &table, 3, MatchScope::FullSequence).unwrap();
        assert_eq!(top3.len(), 3.min(full.len()));
        let mut expected = full.top_entries(3);
        expected.sort_by_key(|e| e.0);
        assert_eq!(top3.entries, expected);
    }

    #[test]
    fn vector_matches_per_term_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let table = QueryTermTable::random(25, 3, 1.0, rng.gen_range(-0.5..0.5), &mut rng);
            let enc = random_encoding(0, rng.gen_range(1..6), 3, &mut rng);
            let v = build_answer_vector(&enc, &table, 0, MatchScope::FullSequence).unwrap();
            for t in 0..25u32 {
                let e = crate::linalg::DenseVector::new(table.embedding(t).to_vec()).unwrap();
                let y = term_match(&e, &enc, MatchScope::FullSequence).unwrap().y;
                let expected = (sparse_feature(y, table.bias) + 1.0).ln() as f32;
                match v.get(t) {
                    Some(s) => assert_eq!(s, expected),
                    None => assert_eq!(expected, 0.0),
                }
            }
            assert!(v.entries.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(v.entries.iter().all(|e| e.1 > 0.0));
        }
    }

    #[test]
    fn empty_and_singleton_indexes() {
        let idx = InvertedIndex::from_vectors(&[], 7, 0).unwrap();
        assert_eq!(idx.num_answers(), 0);
        assert_eq!(idx.num_terms_with_postings(), 0);
        let v = SparseTermVector {
            answer_id: 0,
            entries: vec![(3, 0.7)],
        };
        let idx = InvertedIndex::from_vectors(std::slice::from_ref(&v), 7, 0).unwrap();
        assert_eq!(
            idx.postings(3),
            &[Posting {
                answer_id: 0,
                score: 0.7
            }]
        );
        assert_eq!(idx.answer_vector(0).unwrap(), v);
        assert!(matches!(
            InvertedIndex::from_vectors(&[v.clone(), v], 7, 0),
            Err(Error::DuplicateAnswerId(0))
        ));
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = QueryTermTable::random(40, 4, 1.0, 0.0, &mut rng);
        let encodings: Vec<_> = (0..30).map(|i| random_encoding(i, 4, 4, &mut rng)).collect();
        let idx = build_index(&encodings, &table, 0, MatchScope::FullSequence, 1).unwrap();
        for enc in &encodings {
            let direct = build_answer_vector(enc, &table, 0, MatchScope::FullSequence).unwrap();
            assert_eq!(idx.answer_vector(enc.answer_id).unwrap(), direct);
        }
        for list in idx.postings.values() {
            assert!(list.windows(2).all(|w| w[0].answer_id < w[1].answer_id));
        }
        assert!(matches!(idx.answer_vector(30), Err(Error::UnknownAnswer(30))));
    }

    #[test]
    fn query_multiplicity_oov_and_fingerprint() {
        let vocab = Vocabulary::from_terms(["a", "b", "c"]).unwrap();
        let vectors = vec![
            SparseTermVector {
                answer_id: 0,
                entries: vec![(0, 0.5), (1, 0.25)],
            },
            SparseTermVector {
                answer_id: 1,
                entries: vec![(0, 0.75)],
            },
        ];
        let idx = InvertedIndex::from_vectors(&vectors, vocab.fingerprint(), 0).unwrap();
        let q = Query::from_ids(vec![0, 0], &vocab).unwrap();
        assert_eq!(idx.query(&q, 10).unwrap(), vec![(1, 1.5), (0, 1.0)]);
        let q = Query::from_ids(vec![0, 1], &vocab).unwrap();
        // 0.5 + 0.25 ties with 0.75; the lower id wins
        assert_eq!(idx.query(&q, 1).unwrap(), vec![(0, 0.75)]);
        let q = Query::from_ids(vec![2], &vocab).unwrap();
        assert!(idx.query(&q, 10).unwrap().is_empty());
        let other = Vocabulary::from_terms(["a", "b", "d"]).unwrap();
        let q = Query::from_ids(vec![0], &other).unwrap();
        assert!(idx
            .query(&q, 10)
            .unwrap_err()
            .to_string()
            .starts_with("index/vocabulary mismatch"));
    }

    #[test]
    fn top_terms_sorted_and_decoded() {
        let vocab = Vocabulary::from_terms(["who", "gates", "microsoft", "founder"]).unwrap();
        let v = SparseTermVector {
            answer_id: 0,
            entries: vec![(0, 0.9), (1, 0.4), (2, 0.9), (3, 0.1)],
        };
        let idx = InvertedIndex::from_vectors(&[v], vocab.fingerprint(), 0).unwrap();
        assert!(idx.top_k_terms(&vocab, 0, 0).unwrap().is_empty());
        let top = idx.top_k_terms(&vocab, 0, 2).unwrap();
        assert_eq!(top, vec![("who".to_string(), 0.9), ("microsoft".to_string(), 0.9)]);
        assert_eq!(idx.top_k_terms(&vocab, 0, 10).unwrap().len(), 4);
        assert!(idx.top_k_terms(&vocab, 1, 3).is_err());
    }

    #[test]
    fn build_is_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = QueryTermTable::random(50, 4, 1.0, 0.1, &mut rng);
        let encodings: Vec<_> = (0..64).map(|i| random_encoding(i, 3, 4, &mut rng)).collect();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| build_index(&encodings, &table, 10, MatchScope::FullSequence, 9).unwrap());
        let b = many.install(|| build_index(&encodings, &table, 10, MatchScope::FullSequence, 9).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
