//! [`Ranker`] adapters for the inverted index, brute-force scoring and BM25.

use crate::bm25::Bm25Index;
use crate::corpus::{AnswerId, Query};
use crate::encoder::AnswerEncoding;
use crate::error::Result;
use crate::eval::Ranker;
use crate::index::InvertedIndex;
use crate::model::SpartaModel;
use crate::scoring::rank_brute_force;
use crate::text::{Tokenizer, Vocabulary};

pub struct SpartaRanker<'a> {
    pub index: &'a InvertedIndex,
    pub vocab: &'a Vocabulary,
    pub tokenizer: &'a dyn Tokenizer,
}

impl Ranker for SpartaRanker<'_> {
    fn rank(&self, question: &str, k: usize) -> Result<Vec<(AnswerId, f64)>> {
        let query = Query::new(question, self.vocab, self.tokenizer);
        self.index.query(&query, k)
    }
}

/// Scores every answer at query time; slow, used as the reference ranking.
pub struct BruteForceRanker<'a> {
    pub model: &'a SpartaModel,
    pub encodings: &'a [AnswerEncoding],
    pub tokenizer: &'a dyn Tokenizer,
}

impl Ranker for BruteForceRanker<'_> {
    fn rank(&self, question: &str, k: usize) -> Result<Vec<(AnswerId, f64)>> {
        let query = Query::new(question, &self.model.vocab, self.tokenizer);
        rank_brute_force(&query, self.encodings, &self.model.query_table, k, self.model.scope)
    }
}

pub struct Bm25Ranker<'a> {
    pub index: &'a Bm25Index,
    pub vocab: &'a Vocabulary,
    pub tokenizer: &'a dyn Tokenizer,
}

impl Ranker for Bm25Ranker<'_> {
    fn rank(&self, question: &str, k: usize) -> Result<Vec<(AnswerId, f64)>> {
        let query = Query::new(question, self.vocab, self.tokenizer);
        self.index.search(&query, k)
    }
}
