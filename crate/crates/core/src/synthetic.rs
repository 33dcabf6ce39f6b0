//! Synthetic paraphrase retrieval data.
//!
//! Every answer sentence mentions a few concept words. A question about it
//! picks some of those concepts and, with a fixed probability, swaps each for
//! its entry in a synonym table, so lexical overlap with the answer is only
//! partial. Sentences are grouped into documents and a candidate's context is
//! its neighbouring sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnswerId, CorpusRecord, EvalRecord};
use crate::error::{Error, Result};

/// (word used in answers, paraphrase used in questions).
pub const SYNONYMS: [(&str, &str); 40] = [
    ("car", "automobile"),
    ("big", "large"),
    ("doctor", "physician"),
    ("begin", "commence"),
    ("buy", "purchase"),
    ("child", "youngster"),
    ("fast", "rapid"),
    ("house", "dwelling"),
    ("river", "stream"),
    ("city", "metropolis"),
    ("king", "monarch"),
    ("money", "currency"),
    ("ship", "vessel"),
    ("song", "melody"),
    ("war", "conflict"),
    ("book", "volume"),
    ("mountain", "peak"),
    ("forest", "woodland"),
    ("teacher", "instructor"),
    ("road", "highway"),
    ("sea", "ocean"),
    ("painter", "artist"),
    ("law", "statute"),
    ("film", "movie"),
    ("island", "isle"),
    ("church", "cathedral"),
    ("army", "troops"),
    ("farm", "ranch"),
    ("bridge", "viaduct"),
    ("election", "vote"),
    ("company", "firm"),
    ("illness", "disease"),
    ("planet", "world"),
    ("engine", "motor"),
    ("garden", "orchard"),
    ("poem", "verse"),
    ("storm", "tempest"),
    ("village", "hamlet"),
    ("language", "tongue"),
    ("weapon", "armament"),
];

const FILLERS: [&str; 8] = ["the", "of", "and", "in", "was", "a", "to", "by"];
const QUESTION_WORD: &str = "what";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_answers: usize,
    pub num_train: usize,
    pub num_heldout: usize,
    /// Concepts drawn from the front of [`SYNONYMS`].
    pub num_concepts: usize,
    pub concepts_per_answer: usize,
    pub concepts_per_question: usize,
    pub synonym_prob: f64,
    pub sentences_per_doc: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_answers: 100,
            num_train: 100,
            num_heldout: 50,
            num_concepts: 30,
            concepts_per_answer: 4,
            concepts_per_question: 4,
            synonym_prob: 0.6,
            sentences_per_doc: 5,
            seed: 2020,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<CorpusRecord>,
    pub train: Vec<EvalRecord>,
    pub heldout: Vec<EvalRecord>,
}

impl SyntheticData {
    /// Answer texts plus training questions, the text a vocabulary is built from.
    pub fn vocabulary_texts(&self) -> Vec<String> {
        self.corpus
            .iter()
            .map(CorpusRecord::full_text)
            .chain(self.train.iter().map(|r| r.question.clone()))
            .collect()
    }
}

/// Deterministic in `config.seed`. Training questions cycle through the
/// answers in order; held-out questions target answers spread evenly over
/// the corpus and use fresh random choices.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    if config.num_concepts == 0 || config.num_concepts > SYNONYMS.len() {
        return Err(Error::InvalidArgument(format!(
            "num_concepts must be in 1..={}",
            SYNONYMS.len()
        )));
    }
    if config.concepts_per_answer == 0
        || config.concepts_per_answer > config.num_concepts
        || config.concepts_per_question == 0
        || config.concepts_per_question > config.concepts_per_answer
    {
        return Err(Error::InvalidArgument(
            "need 1 <= concepts_per_question <= concepts_per_answer <= num_concepts".into(),
        ));
    }
    if config.num_answers == 0 || config.sentences_per_doc == 0 {
        return Err(Error::InvalidArgument(
            "num_answers and sentences_per_doc must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.synonym_prob) {
        return Err(Error::InvalidArgument("synonym_prob must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let concept_ids: Vec<usize> = (0..config.num_concepts).collect();

    let mut concepts = Vec::with_capacity(config.num_answers);
    let mut sentences = Vec::with_capacity(config.num_answers);
    for _ in 0..config.num_answers {
        let mut chosen: Vec<usize> = concept_ids
            .choose_multiple(&mut rng, config.concepts_per_answer)
            .copied()
            .collect();
        chosen.sort_unstable();
        let mut words: Vec<&str> = chosen.iter().map(|&c| SYNONYMS[c].0).collect();
        for _ in 0..2 {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, FILLERS[rng.gen_range(0..FILLERS.len())]);
        }
        sentences.push(words.join(" "));
        concepts.push(chosen);
    }

    let corpus = (0..config.num_answers)
        .map(|i| {
            let doc = i / config.sentences_per_doc;
            let same_doc = |j: usize| j / config.sentences_per_doc == doc;
            let left = if i > 0 && same_doc(i - 1) {
                sentences[i - 1].clone()
            } else {
                String::new()
            };
            let right = if i + 1 < config.num_answers && same_doc(i + 1) {
                sentences[i + 1].clone()
            } else {
                String::new()
            };
            CorpusRecord {
                id: i as AnswerId,
                answer: sentences[i].clone(),
                context_left: left,
                context_right: right,
                doc: Some(doc as u64),
            }
        })
        .collect();

    let question = |answer: usize, rng: &mut ChaCha8Rng| -> String {
        let mut words = vec![QUESTION_WORD];
        for &c in concepts[answer].choose_multiple(rng, config.concepts_per_question) {
            let (plain, paraphrase) = SYNONYMS[c];
            words.push(if rng.gen_bool(config.synonym_prob) {
                paraphrase
            } else {
                plain
            });
        }
        words.join(" ")
    };
    let train = (0..config.num_train)
        .map(|i| {
            let answer = i % config.num_answers;
            EvalRecord {
                qid: i as u64,
                question: question(answer, &mut rng),
                answer_id: answer as AnswerId,
            }
        })
        .collect();
    let heldout = (0..config.num_heldout)
        .map(|i| {
            let answer = i * config.num_answers / config.num_heldout.max(1);
            EvalRecord {
                qid: (config.num_train + i) as u64,
                question: question(answer, &mut rng),
                answer_id: answer as AnswerId,
            }
        })
        .collect();
    Ok(SyntheticData { corpus, train, heldout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use std::collections::HashSet;

    #[test]
    fn shapes_and_determinism() {
        let config = SyntheticConfig::default();
        let data = generate(&config).unwrap();
        assert_eq!(data.corpus.len(), 100);
        assert_eq!(data.train.len(), 100);
        assert_eq!(data.heldout.len(), 50);
        assert_eq!(data, generate(&config).unwrap());
        let other = generate(&SyntheticConfig { seed: 1, ..config }).unwrap();
        assert_ne!(data, other);
        assert!(data.corpus.iter().enumerate().all(|(i, r)| r.id as usize == i));
        assert_eq!(data.corpus[5].doc, Some(1));
        assert!(data.corpus[5].context_left.is_empty());
        assert_eq!(data.corpus[6].context_left, data.corpus[5].answer);
    }

    #[test]
    fn paraphrases_never_appear_in_answers() {
        let data = generate(&SyntheticConfig::default()).unwrap();
        let paraphrases: HashSet<&str> = SYNONYMS.iter().map(|s| s.1).collect();
        for r in &data.corpus {
            assert!(tokenize(&r.full_text())
                .iter()
                .all(|t| !paraphrases.contains(t.as_str())));
        }
        let swapped = data
            .train
            .iter()
            .flat_map(|q| tokenize(&q.question))
            .filter(|t| paraphrases.contains(t.as_str()))
            .count();
        assert!(swapped > 0);
    }

    #[test]
    fn question_concepts_come_from_the_answer() {
        let data = generate(&SyntheticConfig::default()).unwrap();
        for q in data.train.iter().chain(&data.heldout) {
            let answer: HashSet<String> = tokenize(&data.corpus[q.answer_id as usize].answer)
                .into_iter()
                .collect();
            for t in tokenize(&q.question).into_iter().skip(1) {
                let plain = SYNONYMS.iter().find(|s| s.0 == t || s.1 == t).unwrap().0;
                assert!(answer.contains(plain));
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let base = SyntheticConfig::default();
        assert!(generate(&SyntheticConfig {
            num_concepts: 41,
            ..base.clone()
        })
        .is_err());
        assert!(generate(&SyntheticConfig {
            concepts_per_question: 5,
            ..base.clone()
        })
        .is_err());
        assert!(generate(&SyntheticConfig {
            synonym_prob: 1.5,
            ..base.clone()
        })
        .is_err());
        assert!(generate(&SyntheticConfig { num_answers: 0, ..base }).is_err());
    }

    #[test]
    fn table_words_are_single_distinct_tokens() {
        let mut seen = HashSet::new();
        for (a, b) in SYNONYMS {
            for w in [a, b] {
                assert_eq!(tokenize(w), vec![w.to_string()]);
                assert!(seen.insert(w), "{w}");
                assert!(!FILLERS.contains(&w) && w != QUESTION_WORD);
            }
        }
    }
}
