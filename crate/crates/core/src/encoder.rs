//! Contextual answer-token embeddings.
//!
//! The built-in encoder is a small trainable contextualizer: each position
//! averages the input embeddings of its `±window` neighbours, adds a segment
//! embedding (answer vs context), then applies an affine projection and
//! `tanh`. Embeddings produced elsewhere (e.g. by a transformer) can be
//! imported from a JSON-lines file instead.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, AnswerCandidate, AnswerId};
use crate::error::{Error, Result};
use crate::linalg::{DenseVector, Matrix};
use crate::text::TermId;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_WINDOW: usize = 2;
pub const INIT_STD: f64 = 0.02;

/// Contextual vectors `s_j`, one row per candidate token.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerEncoding {
    pub answer_id: AnswerId,
    vectors: Matrix,
    answer_span: Range<usize>,
}

impl AnswerEncoding {
    /// Wraps precomputed vectors. Every position counts as an answer position.
    pub fn new(answer_id: AnswerId, vectors: Matrix) -> Result<Self> {
        if !vectors.is_finite() {
            return Err(Error::NonFinite("answer encoding"));
        }
        let n = vectors.rows();
        Ok(AnswerEncoding {
            answer_id,
            vectors,
            answer_span: 0..n,
        })
    }

    pub fn with_answer_span(mut self, span: Range<usize>) -> Result<Self> {
        if span.start > span.end || span.end > self.vectors.rows() {
            return Err(Error::InvalidArgument(format!(
                "answer span {span:?} outside {} positions",
                self.vectors.rows()
            )));
        }
        self.answer_span = span;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        self.vectors.row(j)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn answer_span(&self) -> Range<usize> {
        self.answer_span.clone()
    }

    pub fn to_dense_vectors(&self) -> Vec<DenseVector> {
        (0..self.len())
            .map(|j| DenseVector::new(self.vector(j).to_vec()).expect("encoding is finite"))
            .collect()
    }
}

/// Parameters of the window-mean contextualizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `V × d` input token embeddings.
    pub token_table: Matrix,
    /// `2 × d`; row 0 for context, row 1 for answer positions.
    pub segment_table: Matrix,
    /// `d × d`
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
    pub window: usize,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(vocab_size: usize, dim: usize, window: usize, rng: &mut R) -> Self {
        EncoderParams {
            token_table: Matrix::random_normal(vocab_size, dim, INIT_STD, rng),
            segment_table: Matrix::zeros(2, dim),
            proj: Matrix::random_normal(dim, dim, INIT_STD, rng),
            proj_bias: vec![0.0; dim],
            window,
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            token_table: Matrix::zeros(self.token_table.rows(), self.token_table.cols()),
            segment_table: Matrix::zeros(2, self.dim()),
            proj: Matrix::zeros(self.dim(), self.dim()),
            proj_bias: vec![0.0; self.dim()],
            window: self.window,
        }
    }

    pub fn dim(&self) -> usize {
        self.token_table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::ShapeMismatch("encoder dim must be positive".into()));
        }
        if self.segment_table.rows() != 2 || self.segment_table.cols() != d {
            return Err(Error::ShapeMismatch("segment table must be 2 x d".into()));
        }
        if self.proj.rows() != d || self.proj.cols() != d || self.proj_bias.len() != d {
            return Err(Error::ShapeMismatch("projection must be d x d with a d bias".into()));
        }
        let finite = self.token_table.is_finite()
            && self.segment_table.is_finite()
            && self.proj.is_finite()
            && self.proj_bias.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("encoder parameters"));
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.token_table.round_to_f32();
        self.segment_table.round_to_f32();
        self.proj.round_to_f32();
        for x in &mut self.proj_bias {
            *x = *x as f32 as f64;
        }
    }
}

/// Forward intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<TermId>,
    labels: Vec<u8>,
    hidden: Matrix,
    pub encoding: AnswerEncoding,
}

impl EncoderTrace {
    fn window_bounds(&self, j: usize, window: usize) -> Range<usize> {
        j.saturating_sub(window)..(j + window + 1).min(self.tokens.len())
    }
}

/// Encodes an (already truncated) candidate.
pub fn encode(candidate: &AnswerCandidate, params: &EncoderParams) -> Result<AnswerEncoding> {
    Ok(encode_traced(candidate, params)?.encoding)
}

pub fn encode_traced(candidate: &AnswerCandidate, params: &EncoderParams) -> Result<EncoderTrace> {
    let vocab_size = params.vocab_size();
    let tokens = candidate.tokens();
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size });
    }
    let labels = candidate.segment_labels();
    let n = tokens.len();
    let d = params.dim();
    let w = params.window;

    let mut hidden = Matrix::zeros(n, d);
    let mut vectors = Matrix::zeros(n, d);
    for (j, &label) in labels.iter().enumerate() {
        let lo = j.saturating_sub(w);
        let hi = (j + w + 1).min(n);
        let inv = 1.0 / (hi - lo) as f64;
        let h = hidden.row_mut(j);
        for &t in &tokens[lo..hi] {
            for (acc, x) in h.iter_mut().zip(params.token_table.row(t as usize)) {
                *acc += x * inv;
            }
        }
        for (acc, x) in h.iter_mut().zip(params.segment_table.row(label as usize)) {
            *acc += x;
        }
        let out = vectors.row_mut(j);
        params.proj.mul_vec_into(hidden.row(j), out);
        for (o, c) in out.iter_mut().zip(&params.proj_bias) {
            *o = (*o + c).tanh();
        }
    }
    let encoding = AnswerEncoding {
        answer_id: candidate.id,
        vectors,
        answer_span: candidate.answer_span(),
    };
    Ok(EncoderTrace {
        tokens,
        labels,
        hidden,
        encoding,
    })
}

/// Accumulates parameter gradients into `grads` given `d loss / d s_j` for
/// every position (`upstream`, `n × d`).
pub fn backward(params: &EncoderParams, trace: &EncoderTrace, upstream: &Matrix, grads: &mut EncoderParams) {
    let d = params.dim();
    let n = trace.tokens.len();
    let mut dz = vec![0.0; d];
    let mut dh = vec![0.0; d];
    for j in 0..n {
        let ds = upstream.row(j);
        if ds.iter().all(|x| *x == 0.0) {
            continue;
        }
        let s = trace.encoding.vector(j);
        for k in 0..d {
            dz[k] = ds[k] * (1.0 - s[k] * s[k]);
        }
        grads.proj.add_outer(1.0, &dz, trace.hidden.row(j));
        for (g, x) in grads.proj_bias.iter_mut().zip(&dz) {
            *g += x;
        }
        dh.fill(0.0);
        params.proj.mul_transpose_vec_acc(&dz, &mut dh);
        for (g, x) in grads
            .segment_table
            .row_mut(trace.labels[j] as usize)
            .iter_mut()
            .zip(&dh)
        {
            *g += x;
        }
        let bounds = trace.window_bounds(j, params.window);
        let inv = 1.0 / bounds.len() as f64;
        for &t in &trace.tokens[bounds] {
            for (g, x) in grads.token_table.row_mut(t as usize).iter_mut().zip(&dh) {
                *g += x * inv;
            }
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct EncodingRecord {
    id: AnswerId,
    vectors: Vec<Vec<f64>>,
}

/// Loads precomputed encodings (`{"id": .., "vectors": [[..], ..]}` per line).
pub fn import_encodings(path: &Path) -> Result<BTreeMap<AnswerId, AnswerEncoding>> {
    let records: Vec<EncodingRecord> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for record in records {
        if record.vectors.is_empty() {
            return Err(Error::EmptyAnswer);
        }
        let vectors = Matrix::from_rows(&record.vectors).map_err(|_| Error::InconsistentEmbeddingDim {
            expected: record.vectors[0].len(),
            found: record
                .vectors
                .iter()
                .map(Vec::len)
                .find(|&l| l != record.vectors[0].len())
                .unwrap_or(0),
            answer_id: record.id,
        })?;
        match dim {
            None => dim = Some(vectors.cols()),
            Some(expected) if expected != vectors.cols() => {
                return Err(Error::InconsistentEmbeddingDim {
                    expected,
                    found: vectors.cols(),
                    answer_id: record.id,
                })
            }
            Some(_) => {}
        }
        if vectors.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "answer {} has zero-dimensional vectors",
                record.id
            )));
        }
        let encoding = AnswerEncoding::new(record.id, vectors)?;
        if out.insert(record.id, encoding).is_some() {
            return Err(Error::DuplicateAnswerId(record.id));
        }
    }
    Ok(out)
}
