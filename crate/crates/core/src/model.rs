//! A complete trained model (vocabulary, query term table, answer encoder)
//! and its binary file format.
//!
//! Layout, little-endian:
//!
//! ```text
//! "SPMD" | version u32 = 1
//! term_count u32 | term_count × (byte_len u32, UTF-8 bytes)
//! d u32 | bias f64
//! query embeddings   V × d f32, row-major
//! token_table        V × d f32
//! segment_table      2 × d f32
//! proj               d × d f32
//! proj_bias          d f32
//! window u32
//! ```
//!
//! Matrices are stored in `f32`. Saving rounds every parameter to `f32`, so
//! `load(save(m))` equals `m.rounded_to_storage()`.

use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::ByteReader;
use crate::corpus::{AnswerCandidate, DEFAULT_MAX_LEN};
use crate::encoder::{self, AnswerEncoding, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scoring::{MatchScope, QueryTermTable};
use crate::text::Vocabulary;

pub const MODEL_MAGIC: [u8; 4] = *b"SPMD";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SpartaModel {
    pub vocab: Vocabulary,
    pub query_table: QueryTermTable,
    pub encoder: EncoderParams,
    /// Not persisted; chosen at index/search time.
    pub scope: MatchScope,
    /// Not persisted; candidates are truncated to this many tokens.
    pub max_len: usize,
}

/// Starting threshold. A positive value keeps every feature active at
/// initialisation, when all activations are tiny.
pub const INITIAL_BIAS: f64 = 0.1;

impl SpartaModel {
    /// Fresh model: encoder initialised randomly from `seed`, query term
    /// embeddings copied from the encoder's token table, bias [`INITIAL_BIAS`].
    pub fn init(vocab: Vocabulary, dim: usize, window: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(vocab.len(), dim, window, &mut rng);
        let query_table = QueryTermTable {
            embeddings: encoder.token_table.clone(),
            bias: INITIAL_BIAS,
            trainable_embeddings: false,
        };
        SpartaModel {
            vocab,
            query_table,
            encoder,
            scope: MatchScope::FullSequence,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let v = self.vocab.len();
        if self.encoder.vocab_size() != v || self.query_table.vocab_size() != v {
            return Err(Error::ShapeMismatch(format!(
                "vocabulary has {v} terms but tables have {} / {} rows",
                self.query_table.vocab_size(),
                self.encoder.vocab_size()
            )));
        }
        if self.query_table.dim() != self.dim() {
            return Err(Error::DimMismatch {
                left: self.query_table.dim(),
                right: self.dim(),
            });
        }
        if !self.query_table.embeddings.is_finite() || !self.query_table.bias.is_finite() {
            return Err(Error::NonFinite("query term table"));
        }
        Ok(())
    }

    /// Truncates and encodes one candidate.
    pub fn encode(&self, candidate: &AnswerCandidate) -> Result<AnswerEncoding> {
        let truncated = candidate.truncate_to_window(self.max_len)?;
        encoder::encode(&truncated, &self.encoder)
    }

    pub fn encode_all(&self, candidates: &[AnswerCandidate]) -> Result<Vec<AnswerEncoding>> {
        use rayon::prelude::*;
        candidates.par_iter().map(|c| self.encode(c)).collect()
    }

    /// The parameters exactly as they will read back from a model file.
    pub fn rounded_to_storage(&self) -> Self {
        let mut out = self.clone();
        out.query_table.embeddings.round_to_f32();
        out.encoder.round_to_f32();
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(&MODEL_MAGIC);
        out.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.vocab.len() as u32).unwrap();
        for term in self.vocab.terms() {
            out.write_u32::<LittleEndian>(term.len() as u32).unwrap();
            out.extend_from_slice(term.as_bytes());
        }
        out.write_u32::<LittleEndian>(self.dim() as u32).unwrap();
        out.write_f64::<LittleEndian>(self.query_table.bias).unwrap();
        for m in [
            &self.query_table.embeddings,
            &self.encoder.token_table,
            &self.encoder.segment_table,
            &self.encoder.proj,
        ] {
            write_f32s(&mut out, m.as_slice());
        }
        write_f32s(&mut out, &self.encoder.proj_bias);
        out.write_u32::<LittleEndian>(self.encoder.window as u32).unwrap();
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        r.magic(MODEL_MAGIC)?;
        let version_offset = r.offset();
        let version = r.u32("version")?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                version,
                offset: version_offset,
            });
        }
        let term_count = r.u32("term count")? as usize;
        let mut terms = Vec::with_capacity(term_count.min(1 << 20));
        for _ in 0..term_count {
            let len = r.u32("term length")? as usize;
            let at = r.offset();
            let bytes = r.bytes(len, "term bytes")?;
            let term = std::str::from_utf8(bytes).map_err(|_| r.error(at, "term is not valid UTF-8"))?;
            terms.push(term.to_owned());
        }
        let vocab_offset = r.offset();
        let vocab =
            Vocabulary::from_terms(terms).map_err(|e| r.error(vocab_offset, format!("invalid vocabulary: {e}")))?;
        let v = vocab.len();
        let d = r.u32("dim")? as usize;
        if d == 0 {
            return Err(r.error(vocab_offset, "dim must be positive"));
        }
        let bias = r.f64("bias")?;
        let embeddings = read_matrix(&mut r, v, d, "query embeddings")?;
        let token_table = read_matrix(&mut r, v, d, "token table")?;
        let segment_table = read_matrix(&mut r, 2, d, "segment table")?;
        let proj = read_matrix(&mut r, d, d, "projection")?;
        let proj_bias = read_matrix(&mut r, 1, d, "projection bias")?.as_slice().to_vec();
        let window = r.u32("window")? as usize;
        r.finish()?;
        let model = SpartaModel {
            vocab,
            query_table: QueryTermTable {
                embeddings,
                bias,
                trainable_embeddings: false,
            },
            encoder: EncoderParams {
                token_table,
                segment_table,
                proj,
                proj_bias,
                window,
            },
            scope: MatchScope::FullSequence,
            max_len: DEFAULT_MAX_LEN,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SpartaModel::from_bytes(&data)
    }
}

fn write_f32s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for &x in values {
        out.write_f32::<LittleEndian>(x as f32).unwrap();
    }
}

fn read_matrix(r: &mut ByteReader<'_>, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    let start = r.offset();
    if r.remaining() < rows * cols * 4 {
        return Err(r.error(start, format!("truncated file while reading {what}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32(what)? as f64);
    }
    Matrix::from_vec(rows, cols, data)
}
