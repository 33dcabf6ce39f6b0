//! Token-level matching between query terms and contextual answer vectors.
//!
//! For a query term with embedding `e`, the term match is the max dot product
//! against every answer vector, `y = max_j e·s_j`. The sparse feature is
//! `φ = max(0, y + b)` and the query score is `Σ ln(φ + 1)` over query
//! tokens, with multiplicity.

use std::cmp::Ordering;

use rand::Rng;

use crate::corpus::{AnswerId, Query};
use crate::encoder::AnswerEncoding;
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseVector, Matrix};
use crate::text::TermId;

/// Which answer positions the max-pool ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchScope {
    /// Answer and context tokens.
    #[default]
    FullSequence,
    /// Answer tokens only.
    AnswerOnly,
}

impl MatchScope {
    pub fn from_answer_only(answer_only: bool) -> Self {
        if answer_only {
            MatchScope::AnswerOnly
        } else {
            MatchScope::FullSequence
        }
    }

    pub(crate) fn positions(self, encoding: &AnswerEncoding) -> std::ops::Range<usize> {
        match self {
            MatchScope::FullSequence => 0..encoding.len(),
            MatchScope::AnswerOnly => encoding.answer_span(),
        }
    }
}

/// Non-contextual query term embeddings plus the global activation bias.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTermTable {
    /// `V × d`, row `t` embeds term `t`.
    pub embeddings: Matrix,
    pub bias: f64,
    pub trainable_embeddings: bool,
}

impl QueryTermTable {
    pub fn new(embeddings: Matrix, bias: f64, trainable_embeddings: bool) -> Result<Self> {
        if !embeddings.is_finite() {
            return Err(Error::NonFinite("query term embeddings"));
        }
        if !bias.is_finite() {
            return Err(Error::NonFinite("bias"));
        }
        Ok(QueryTermTable {
            embeddings,
            bias,
            trainable_embeddings,
        })
    }

    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, std: f64, bias: f64, rng: &mut R) -> Self {
        QueryTermTable {
            embeddings: Matrix::random_normal(vocab_size, dim, std, rng),
            bias,
            trainable_embeddings: false,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embedding(&self, term: TermId) -> &[f64] {
        self.embeddings.row(term as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermMatchResult {
    pub y: f64,
    pub argmax_position: usize,
}

/// `max_j e·s_j`, ties resolved to the smallest position.
pub fn term_match(e: &DenseVector, encoding: &AnswerEncoding, scope: MatchScope) -> Result<TermMatchResult> {
    if e.dim() != encoding.dim() && !encoding.is_empty() {
        return Err(Error::DimMismatch {
            left: e.dim(),
            right: encoding.dim(),
        });
    }
    term_match_slice(e.as_slice(), encoding, scope)
}

pub(crate) fn term_match_slice(e: &[f64], encoding: &AnswerEncoding, scope: MatchScope) -> Result<TermMatchResult> {
    let positions = scope.positions(encoding);
    if positions.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let mut best = TermMatchResult {
        y: f64::NEG_INFINITY,
        argmax_position: positions.start,
    };
    for j in positions {
        let v = dot(e, encoding.vector(j));
        if v > best.y {
            best = TermMatchResult {
                y: v,
                argmax_position: j,
            };
        }
    }
    Ok(best)
}

/// `max(0, y + b)`
#[inline]
pub fn sparse_feature(y: f64, bias: f64) -> f64 {
    (y + bias).max(0.0)
}

/// Contribution of one query term, `ln(φ + 1)`.
#[inline]
pub fn term_contribution(y: f64, bias: f64) -> f64 {
    sparse_feature(y, bias).ln_1p()
}

pub fn score(query: &Query, encoding: &AnswerEncoding, table: &QueryTermTable, scope: MatchScope) -> Result<f64> {
    check_query(query, table)?;
    if encoding.dim() != table.dim() {
        return Err(Error::DimMismatch {
            left: table.dim(),
            right: encoding.dim(),
        });
    }
    let mut total = 0.0;
    for &t in &query.token_ids {
        let m = term_match_slice(table.embedding(t), encoding, scope)?;
        total += term_contribution(m.y, table.bias);
    }
    Ok(total)
}

fn check_query(query: &Query, table: &QueryTermTable) -> Result<()> {
    if let Some(&id) = query.token_ids.iter().find(|&&t| t as usize >= table.vocab_size()) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: table.vocab_size(),
        });
    }
    Ok(())
}

/// Scores every encoding and returns the best `k`, descending by score with
/// ties by ascending answer id.
pub fn rank_brute_force(
    query: &Query,
    encodings: &[AnswerEncoding],
    table: &QueryTermTable,
    k: usize,
    scope: MatchScope,
) -> Result<Vec<(AnswerId, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let scored = encodings
        .iter()
        .map(|enc| Ok((enc.answer_id, score(query, enc, table, scope)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_k(scored, k))
}

/// Descending by score, then ascending by id; truncated to `k`.
pub fn top_k<T: Copy + Ord>(mut scored: Vec<(T, f64)>, k: usize) -> Vec<(T, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enc(rows: &[Vec<f64>]) -> AnswerEncoding {
        AnswerEncoding::new(0, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn vec(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn term_match_examples() {
        let e = enc(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![-1.0, 3.0]]);
        let m = term_match(&DenseVector::zeros(2), &e, MatchScope::FullSequence).unwrap();
        assert_eq!((m.y, m.argmax_position), (0.0, 0));
        let m = term_match(&vec(&[1.0, 0.0]), &enc(&[vec![0.0, 0.0]]), MatchScope::FullSequence).unwrap();
        assert_eq!(m.y, 0.0);
        let m = term_match(&vec(&[1.0, 2.0]), &e, MatchScope::FullSequence).unwrap();
        assert_eq!((m.y, m.argmax_position), (5.0, 2));
    }

    #[test]
    fn term_match_answer_only_scope() {
        let e = enc(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![-1.0, 3.0]])
            .with_answer_span(0..2)
            .unwrap();
        let m = term_match(&vec(&[1.0, 2.0]), &e, MatchScope::AnswerOnly).unwrap();
        assert_eq!((m.y, m.argmax_position), (3.0, 0));
    }

    #[test]
    fn term_match_errors() {
        let empty = AnswerEncoding::new(0, Matrix::zeros(0, 2)).unwrap();
        assert_eq!(
            term_match(&vec(&[1.0, 0.0]), &empty, MatchScope::FullSequence)
                .unwrap_err()
                .to_string(),
            "empty answer"
        );
        assert!(matches!(
            term_match(&vec(&[1.0]), &enc(&[vec![0.0, 0.0]]), MatchScope::FullSequence),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn sparse_feature_examples() {
        assert_eq!(sparse_feature(0.0, 0.0), 0.0);
        assert_eq!(sparse_feature(-2.0, 1.0), 0.0);
        assert_eq!(sparse_feature(2.0, -0.5), 1.5);
    }

    fn two_term_setup(bias: f64) -> (Vocabulary, QueryTermTable, AnswerEncoding) {
        let vocab = Vocabulary::from_terms(["a", "b"]).unwrap();
        let table = QueryTermTable::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            bias,
            false,
        )
        .unwrap();
        let y = std::f64::consts::E - 1.0;
        let encoding = enc(&[vec![y, 0.0], vec![0.0, y]]);
        (vocab, table, encoding)
    }

    #[test]
    fn score_examples() {
        let (vocab, table, encoding) = two_term_setup(0.0);
        let q = Query::from_ids(vec![0, 1], &vocab).unwrap();
        let s = score(&q, &encoding, &table, MatchScope::FullSequence).unwrap();
        assert!((s - 2.0).abs() < 1e-12);

        let (_, clipped, _) = two_term_setup(-10.0);
        assert_eq!(score(&q, &encoding, &clipped, MatchScope::FullSequence).unwrap(), 0.0);

        let single = Query::from_ids(vec![0], &vocab).unwrap();
        let double = Query::from_ids(vec![0, 0], &vocab).unwrap();
        let s1 = score(&single, &encoding, &table, MatchScope::FullSequence).unwrap();
        let s2 = score(&double, &encoding, &table, MatchScope::FullSequence).unwrap();
        assert_eq!(s2, 2.0 * s1);

        let empty = Query::from_ids(vec![], &vocab).unwrap();
        assert_eq!(score(&empty, &encoding, &table, MatchScope::FullSequence).unwrap(), 0.0);
    }

    #[test]
    fn rank_tie_break_and_single_answer() {
        let (vocab, table, _) = two_term_setup(-100.0);
        let q = Query::from_ids(vec![0], &vocab).unwrap();
        let encodings: Vec<AnswerEncoding> = (0..4)
            .rev()
            .map(|id| AnswerEncoding::new(id, Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap())
            .collect();
        let ranked = rank_brute_force(&q, &encodings, &table, 10, MatchScope::FullSequence).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(ranked.iter().all(|r| r.1 == 0.0));
        let one = rank_brute_force(&q, &encodings[..1], &table, 5, MatchScope::FullSequence).unwrap();
        assert_eq!(one.len(), 1);
        assert!(rank_brute_force(&q, &encodings, &table, 0, MatchScope::FullSequence).is_err());
    }

    /// Independent straight-line evaluation of the score formula.
    fn reference_score(query: &[u32], vectors: &[Vec<f64>], emb: &[Vec<f64>], bias: f64) -> f64 {
        let mut total = 0.0;
        for &t in query {
            let mut best = f64::NEG_INFINITY;
            for s in vectors {
                let d: f64 = emb[t as usize].iter().zip(s).map(|(a, b)| a * b).sum();
                if d > best {
                    best = d;
                }
            }
            let phi = if best + bias > 0.0 { best + bias } else { 0.0 };
            total += (phi + 1.0).ln();
        }
        total
    }

    fn random_instance(seed: u64) -> (Vocabulary, QueryTermTable, Vec<Vec<Vec<f64>>>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 12;
        let d = 4;
        let vocab = Vocabulary::from_terms((0..v).map(|i| format!("t{i}"))).unwrap();
        let table = QueryTermTable::random(v, d, 1.0, rng.gen_range(-1.0..1.0), &mut rng);
        let answers = (0..rng.gen_range(1..8))
            .map(|_| {
                (0..rng.gen_range(1..6))
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let query = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..v as u32)).collect();
        (vocab, table, answers, query)
    }

    #[test]
    fn rank_matches_reference_implementation() {
        for seed in 0..50 {
            let (vocab, table, answers, query) = random_instance(seed);
            let emb: Vec<Vec<f64>> = (0..table.vocab_size())
                .map(|t| table.embedding(t as u32).to_vec())
                .collect();
            let q = Query::from_ids(query.clone(), &vocab).unwrap();
            let encodings: Vec<AnswerEncoding> = answers
                .iter()
                .enumerate()
                .map(|(i, rows)| AnswerEncoding::new(i as u32, Matrix::from_rows(rows).unwrap()).unwrap())
                .collect();
            let ranked = rank_brute_force(&q, &encodings, &table, 100, MatchScope::FullSequence).unwrap();
            let mut expected: Vec<(u32, f64)> = answers
                .iter()
                .enumerate()
                .map(|(i, rows)| (i as u32, reference_score(&query, rows, &emb, table.bias)))
                .collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(ranked.len(), expected.len());
            for (got, want) in ranked.iter().zip(&expected) {
                assert_eq!(got.0, want.0, "seed {seed}");
                assert!((got.1 - want.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_never_negative_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vocab = Vocabulary::from_terms((0..20).map(|i| format!("t{i}"))).unwrap();
        for _ in 0..1000 {
            let table = QueryTermTable::random(20, 3, 2.0, rng.gen_range(-3.0..3.0), &mut rng);
            let n = rng.gen_range(1..6);
            let encoding = AnswerEncoding::new(0, Matrix::random_normal(n, 3, 1.0, &mut rng)).unwrap();
            let q = Query::from_ids((0..rng.gen_range(0..8)).map(|_| rng.gen_range(0..20)).collect(), &vocab).unwrap();
            assert!(score(&q, &encoding, &table, MatchScope::FullSequence).unwrap() >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn term_match_equals_enumeration(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..10);
            let encoding = AnswerEncoding::new(0, Matrix::random_normal(n, 3, 1.0, &mut rng)).unwrap();
            let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = term_match(&DenseVector::new(e.clone()).unwrap(), &encoding, MatchScope::FullSequence).unwrap();
            let dots: Vec<f64> = (0..n).map(|j| dot(&e, encoding.vector(j))).collect();
            let max = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(m.y, max);
            prop_assert_eq!(dots.iter().position(|&d| d == max).unwrap(), m.argmax_position);
        }

        #[test]
        fn score_permutation_invariant_and_monotone_in_bias(seed in 0u64..10_000, db in 0.0f64..2.0) {
            use rand::seq::SliceRandom;
            let (vocab, mut table, answers, query) = random_instance(seed);
            let encoding = AnswerEncoding::new(0, Matrix::from_rows(&answers[0]).unwrap()).unwrap();
            let q = Query::from_ids(query.clone(), &vocab).unwrap();
            let base = score(&q, &encoding, &table, MatchScope::FullSequence).unwrap();
            let mut shuffled = query.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            let qs = Query::from_ids(shuffled, &vocab).unwrap();
            let permuted = score(&qs, &encoding, &table, MatchScope::FullSequence).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
            table.bias += db;
            prop_assert!(score(&q, &encoding, &table, MatchScope::FullSequence).unwrap() >= base);
        }

        #[test]
        fn extra_context_token_never_lowers_score(seed in 0u64..10_000) {
            let (vocab, table, answers, query) = random_instance(seed);
            let q = Query::from_ids(query, &vocab).unwrap();
            let rows = &answers[0];
            let base = score(&q, &AnswerEncoding::new(0, Matrix::from_rows(rows).unwrap()).unwrap(), &table, MatchScope::FullSequence).unwrap();
            let mut extended = rows.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            extended.push((0..table.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let grown = score(&q, &AnswerEncoding::new(0, Matrix::from_rows(&extended).unwrap()).unwrap(), &table, MatchScope::FullSequence).unwrap();
            prop_assert!(grown >= base);
        }
    }
}
