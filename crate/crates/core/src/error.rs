use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no terms survive min_count")]
    NoTermsSurvive,
    #[error("answer longer than window: {answer_len} tokens, window {max_len}")]
    AnswerLongerThanWindow { answer_len: usize, max_len: usize },
    #[error("token out of vocabulary range: id {id}, vocabulary size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("inconsistent embedding dim: expected {expected}, found {found} (answer {answer_id})")]
    InconsistentEmbeddingDim {
        expected: usize,
        found: usize,
        answer_id: u32,
    },
    #[error("duplicate answer id {0}")]
    DuplicateAnswerId(u32),
    #[error("answer ids must be dense 0..N-1 in file order: expected {expected}, found {found}")]
    NonDenseAnswerId { expected: u32, found: u32 },
    #[error("empty answer")]
    EmptyAnswer,
    #[error("corpus too small: {corpus_size} candidates for {count} negatives")]
    CorpusTooSmall { corpus_size: usize, count: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty query set")]
    EmptyQuerySet,
    #[error("index/vocabulary mismatch: index fingerprint {index:#018x}, vocabulary fingerprint {vocab:#018x}")]
    VocabularyMismatch { index: u64, vocab: u64 },
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { version: u32, offset: u64 },
    #[error("malformed file at offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("unknown answer id {0}")]
    UnknownAnswer(u32),
    #[error("query {qid}: answer id {answer_id} does not resolve to a corpus candidate")]
    UnresolvableAnswer { qid: u64, answer_id: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
