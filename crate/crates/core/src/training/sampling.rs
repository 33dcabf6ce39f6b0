use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{AnswerCandidate, AnswerId};
use crate::error::{Error, Result};

pub const DEFAULT_NEGATIVES: usize = 8;
pub const DEFAULT_NEARBY_WINDOW: usize = 3;

/// Draws `count` distinct negatives for `positive`.
///
/// `count / 2` come from nearby candidates (ids within `±window` of the
/// positive in the same source document); the rest, plus any shortfall in
/// nearby candidates, are uniform over the whole corpus minus the positive.
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: &AnswerCandidate,
    corpus: &[AnswerCandidate],
    count: usize,
    window: usize,
    rng: &mut R,
) -> Result<Vec<AnswerId>> {
    if corpus.len() <= count {
        return Err(Error::CorpusTooSmall {
            corpus_size: corpus.len(),
            count,
        });
    }
    let pos = positive.id as usize;
    let lo = pos.saturating_sub(window);
    let hi = (pos + window).min(corpus.len() - 1);
    let pool: Vec<AnswerId> = corpus[lo..=hi]
        .iter()
        .filter(|c| c.id != positive.id && c.doc == positive.doc)
        .map(|c| c.id)
        .collect();

    let nearby_target = count / 2;
    let mut chosen: Vec<AnswerId> = pool
        .choose_multiple(rng, nearby_target.min(pool.len()))
        .copied()
        .collect();
    let mut taken: HashSet<AnswerId> = chosen.iter().copied().collect();
    taken.insert(positive.id);
    while chosen.len() < count {
        let id = rng.gen_range(0..corpus.len()) as AnswerId;
        if taken.insert(id) {
            chosen.push(id);
        }
    }
    Ok(chosen)
}
