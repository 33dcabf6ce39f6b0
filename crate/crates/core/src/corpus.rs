//! Answer candidates, queries and the JSON-lines corpus/query files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{TermId, Tokenizer, Vocabulary};

pub type AnswerId = u32;

/// Default window, in tokens, a candidate is truncated to before encoding.
pub const DEFAULT_MAX_LEN: usize = 512;

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: AnswerId,
    pub answer: String,
    #[serde(default)]
    pub context_left: String,
    #[serde(default)]
    pub context_right: String,
    /// Source document. Candidates without one are treated as belonging to
    /// a single shared document when looking for nearby negatives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<u64>,
}

impl CorpusRecord {
    pub fn full_text(&self) -> String {
        format!("{} {} {}", self.context_left, self.answer, self.context_right)
    }
}

/// One line of a query/qrels file: a question and its single relevant answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: u64,
    pub question: String,
    pub answer_id: AnswerId,
}

/// An answer sentence with its surrounding context, as term ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerCandidate {
    pub id: AnswerId,
    pub doc: Option<u64>,
    pub context_left: Vec<TermId>,
    pub answer: Vec<TermId>,
    pub context_right: Vec<TermId>,
}

impl AnswerCandidate {
    pub fn new(
        id: AnswerId,
        context_left: Vec<TermId>,
        answer: Vec<TermId>,
        context_right: Vec<TermId>,
    ) -> Result<Self> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        Ok(AnswerCandidate {
            id,
            doc: None,
            context_left,
            answer,
            context_right,
        })
    }

    pub fn with_doc(mut self, doc: Option<u64>) -> Self {
        self.doc = doc;
        self
    }

    pub fn len(&self) -> usize {
        self.context_left.len() + self.answer.len() + self.context_right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `context_left ++ answer ++ context_right`
    pub fn tokens(&self) -> Vec<TermId> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.context_left);
        out.extend_from_slice(&self.answer);
        out.extend_from_slice(&self.context_right);
        out
    }

    /// 1 on answer positions, 0 on context positions.
    pub fn segment_labels(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len()];
        let start = self.context_left.len();
        out[start..start + self.answer.len()].fill(1);
        out
    }

    /// Range of answer positions within [`tokens`](Self::tokens).
    pub fn answer_span(&self) -> std::ops::Range<usize> {
        let start = self.context_left.len();
        start..start + self.answer.len()
    }

    /// Trims the context to fit `max_len` tokens, keeping the tokens closest
    /// to the answer. Both sides get `floor((max_len - |answer|) / 2)` tokens;
    /// a side that needs fewer hands its surplus to the other.
    pub fn truncate_to_window(&self, max_len: usize) -> Result<AnswerCandidate> {
        if max_len < self.answer.len() {
            return Err(Error::AnswerLongerThanWindow {
                answer_len: self.answer.len(),
                max_len,
            });
        }
        if self.len() <= max_len {
            return Ok(self.clone());
        }
        let available = max_len - self.answer.len();
        let half = available / 2;
        let (left_len, right_len) = (self.context_left.len(), self.context_right.len());
        let (keep_left, keep_right) = if left_len < half {
            (left_len, right_len.min(available - left_len))
        } else if right_len < half {
            (left_len.min(available - right_len), right_len)
        } else {
            (half, half)
        };
        Ok(AnswerCandidate {
            id: self.id,
            doc: self.doc,
            context_left: self.context_left[left_len - keep_left..].to_vec(),
            answer: self.answer.clone(),
            context_right: self.context_right[..keep_right].to_vec(),
        })
    }
}

/// A tokenized query. Out-of-vocabulary tokens are dropped and counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub raw_text: String,
    pub token_ids: Vec<TermId>,
    pub dropped_oov_count: usize,
    /// Fingerprint of the vocabulary the ids refer to.
    pub vocab_fingerprint: u64,
}

impl Query {
    pub fn new(text: &str, vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> Self {
        let tokens = tokenizer.tokenize(text);
        let (token_ids, dropped_oov_count) = vocab.encode_tokens(&tokens);
        Query {
            raw_text: text.to_owned(),
            token_ids,
            dropped_oov_count,
            vocab_fingerprint: vocab.fingerprint(),
        }
    }

    /// Builds a query directly from term ids.
    pub fn from_ids(token_ids: Vec<TermId>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(&id) = token_ids.iter().find(|&&id| id as usize >= vocab.len()) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: vocab.len(),
            });
        }
        let raw_text = token_ids
            .iter()
            .filter_map(|&id| vocab.term(id))
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Query {
            raw_text,
            token_ids,
            dropped_oov_count: 0,
            vocab_fingerprint: vocab.fingerprint(),
        })
    }
}

/// Raw corpus records plus their tokenized candidates, indexed by answer id.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<CorpusRecord>,
    candidates: Vec<AnswerCandidate>,
}

impl Corpus {
    /// Tokenizes every record against `vocab`. Record ids must be `0..N-1`
    /// in file order.
    pub fn from_records(records: Vec<CorpusRecord>, vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> Result<Self> {
        let mut candidates = Vec::with_capacity(records.len());
        for (position, record) in records.iter().enumerate() {
            if record.id as usize != position {
                if (record.id as usize) < position {
                    return Err(Error::DuplicateAnswerId(record.id));
                }
                return Err(Error::NonDenseAnswerId {
                    expected: position as AnswerId,
                    found: record.id,
                });
            }
            let encode = |text: &str| vocab.encode_tokens(&tokenizer.tokenize(text)).0;
            let candidate = AnswerCandidate::new(
                record.id,
                encode(&record.context_left),
                encode(&record.answer),
                encode(&record.context_right),
            )?
            .with_doc(record.doc);
            candidates.push(candidate);
        }
        Ok(Corpus { records, candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn candidates(&self) -> &[AnswerCandidate] {
        &self.candidates
    }

    pub fn candidate(&self, id: AnswerId) -> Option<&AnswerCandidate> {
        self.candidates.get(id as usize)
    }

    pub fn record(&self, id: AnswerId) -> Option<&CorpusRecord> {
        self.records.get(id as usize)
    }
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_owned(),
            line: index + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|source| Error::Json {
            path: path.to_owned(),
            line: 0,
            source,
        })?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
