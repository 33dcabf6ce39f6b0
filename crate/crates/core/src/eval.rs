//! Ranking metrics over (query, single relevant answer) pairs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerId, EvalRecord};
use crate::error::{Error, Result};

/// Anything that turns question text into a ranked answer list.
pub trait Ranker: Sync {
    /// At most `k` results, best first.
    fn rank(&self, question: &str, k: usize) -> Result<Vec<(AnswerId, f64)>>;
}

/// 1-based rank of `gold` in `ranking`.
pub fn rank_of(ranking: &[AnswerId], gold: AnswerId) -> Option<usize> {
    ranking.iter().position(|&id| id == gold).map(|p| p + 1)
}

fn check_lengths(rankings: &[Vec<AnswerId>], gold: &[AnswerId]) -> Result<()> {
    if rankings.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if rankings.len() != gold.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rankings for {} gold answers",
            rankings.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Mean reciprocal rank; a query whose gold answer is missing contributes 0.
pub fn mrr(rankings: &[Vec<AnswerId>], gold: &[AnswerId]) -> Result<f64> {
    check_lengths(rankings, gold)?;
    let total: f64 = rankings
        .iter()
        .zip(gold)
        .map(|(r, &g)| rank_of(r, g).map_or(0.0, |rank| 1.0 / rank as f64))
        .sum();
    Ok(total / rankings.len() as f64)
}

/// Fraction of queries whose gold answer is in the top `k`.
pub fn recall_at_k(rankings: &[Vec<AnswerId>], gold: &[AnswerId], k: usize) -> Result<f64> {
    check_lengths(rankings, gold)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = rankings
        .iter()
        .zip(gold)
        .filter(|(r, &g)| rank_of(r, g).is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub qid: u64,
    /// `None` when the gold answer was not retrieved.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub recall: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryRank>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every record through `ranker` (retrieving `depth` answers each) and
/// reports MRR, recall at each of `k_list`, and per-query ranks.
pub fn evaluate(
    ranker: &dyn Ranker,
    num_answers: usize,
    records: &[EvalRecord],
    k_list: &[usize],
    depth: usize,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if let Some(r) = records.iter().find(|r| r.answer_id as usize >= num_answers) {
        return Err(Error::UnresolvableAnswer {
            qid: r.qid,
            answer_id: r.answer_id,
        });
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let rankings = records
        .par_iter()
        .map(|r| {
            let ranked = ranker.rank(&r.question, depth)?;
            Ok(ranked.into_iter().map(|(id, _)| id).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<AnswerId> = records.iter().map(|r| r.answer_id).collect();
    let mut recall = BTreeMap::new();
    for &k in k_list {
        recall.insert(k, recall_at_k(&rankings, &gold, k)?);
    }
    let per_query = records
        .iter()
        .zip(&rankings)
        .map(|(r, ranking)| QueryRank {
            qid: r.qid,
            rank: rank_of(ranking, r.answer_id),
        })
        .collect();
    Ok(EvalReport {
        mrr: mrr(&rankings, &gold)?,
        recall,
        per_query,
    })
}
