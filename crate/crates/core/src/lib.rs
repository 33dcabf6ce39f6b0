//! Learned sparse retrieval with token-level term matching.
//!
//! A query term is scored against an answer by max-pooling its embedding's
//! dot product over the answer's contextual token vectors, thresholding with
//! a bias and log-saturating. Because query embeddings are non-contextual,
//! every vocabulary term can be scored against every answer offline, which
//! turns retrieval into inverted-index lookups.

mod binio;
pub mod bm25;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod linalg;
pub mod model;
pub mod rankers;
pub mod scoring;
pub mod synthetic;
pub mod text;
pub mod training;

pub use corpus::{AnswerCandidate, AnswerId, Corpus, CorpusRecord, EvalRecord, Query};
pub use error::{Error, Result};
pub use index::InvertedIndex;
pub use model::SpartaModel;
pub use text::{SimpleTokenizer, TermId, Tokenizer, Vocabulary};
