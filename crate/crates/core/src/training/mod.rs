//! Learning-to-rank training of the query term table and the answer encoder.
//!
//! Each example pairs a query with its relevant answer and a set of sampled
//! negatives. The objective is a softmax cross-entropy over candidate
//! scores; gradients are derived by hand and routed through the max-pool
//! (to the first argmax only) and the ReLU (only where `y + b > 0`).

mod adam;
mod sampling;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use sampling::{sample_negatives, DEFAULT_NEARBY_WINDOW, DEFAULT_NEGATIVES};

use crate::corpus::{AnswerCandidate, AnswerId, Corpus, EvalRecord, Query};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::eval;
use crate::linalg::{axpy, Matrix};
use crate::model::SpartaModel;
use crate::scoring::{self, term_match_slice};
use crate::text::{Tokenizer, Vocabulary};

/// A query, its relevant answer and the negatives it is contrasted with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: Query,
    pub positive: AnswerId,
    pub negatives: Vec<AnswerId>,
}

impl TrainingExample {
    pub fn new(query: Query, positive: AnswerId, negatives: Vec<AnswerId>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::InvalidArgument("an example needs at least one negative".into()));
        }
        if negatives.contains(&positive) {
            return Err(Error::InvalidArgument(format!(
                "positive {positive} listed among its negatives"
            )));
        }
        let mut sorted = negatives.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("negatives must be distinct".into()));
        }
        Ok(TrainingExample {
            query,
            positive,
            negatives,
        })
    }
}

/// Cross-entropy over candidate scores. Returns the loss to minimise and its
/// derivative with respect to the positive and to each negative score.
///
/// With `include_positive` the partition function sums over the positive
/// and the negatives, so the loss is a proper softmax cross-entropy. Without
/// it the partition covers the negatives only.
pub fn loss_from_scores(positive: f64, negatives: &[f64], include_positive: bool) -> (f64, f64, Vec<f64>) {
    let mut max = negatives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if include_positive {
        max = max.max(positive);
    }
    let mut weights: Vec<f64> = negatives.iter().map(|f| (f - max).exp()).collect();
    let positive_weight = if include_positive { (positive - max).exp() } else { 0.0 };
    let partition: f64 = weights.iter().sum::<f64>() + positive_weight;
    // one term of the partition is exactly 1; summing the others keeps ln_1p precise
    let rest = match negatives.iter().position(|&f| f == max) {
        Some(top) => {
            weights
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != top)
                .map(|(_, w)| w)
                .sum::<f64>()
                + positive_weight
        }
        None => weights.iter().sum::<f64>(),
    };
    for w in &mut weights {
        *w /= partition;
    }
    let loss = (max - positive) + rest.ln_1p();
    let d_positive = positive_weight / partition - 1.0;
    (loss, d_positive, weights)
}

/// Gradients of the loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub bias: f64,
    pub query_embeddings: Matrix,
    pub encoder: EncoderParams,
}

impl Gradients {
    pub fn zeros_like(model: &SpartaModel) -> Self {
        Gradients {
            bias: 0.0,
            query_embeddings: Matrix::zeros(model.vocab.len(), model.dim()),
            encoder: model.encoder.zeros_like(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        self.bias += factor * other.bias;
        axpy(
            self.query_embeddings.as_mut_slice(),
            factor,
            other.query_embeddings.as_slice(),
        );
        axpy(
            self.encoder.token_table.as_mut_slice(),
            factor,
            other.encoder.token_table.as_slice(),
        );
        axpy(
            self.encoder.segment_table.as_mut_slice(),
            factor,
            other.encoder.segment_table.as_slice(),
        );
        axpy(self.encoder.proj.as_mut_slice(), factor, other.encoder.proj.as_slice());
        axpy(&mut self.encoder.proj_bias, factor, &other.encoder.proj_bias);
    }

    /// Tensors in the order of [`trainable_tensors_mut`].
    pub fn tensors(&self, include_query_embeddings: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![std::slice::from_ref(&self.bias)];
        if include_query_embeddings {
            out.push(self.query_embeddings.as_slice());
        }
        out.extend([
            self.encoder.token_table.as_slice(),
            self.encoder.segment_table.as_slice(),
            self.encoder.proj.as_slice(),
            self.encoder.proj_bias.as_slice(),
        ]);
        out
    }
}

/// The trainable parameter tensors of `model`: bias, query embeddings when
/// unfrozen, then the encoder tables.
pub fn trainable_tensors_mut(model: &mut SpartaModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![std::slice::from_mut(&mut model.query_table.bias)];
    if model.query_table.trainable_embeddings {
        out.push(model.query_table.embeddings.as_mut_slice());
    }
    let enc = &mut model.encoder;
    out.push(enc.token_table.as_mut_slice());
    out.push(enc.segment_table.as_mut_slice());
    out.push(enc.proj.as_mut_slice());
    out.push(enc.proj_bias.as_mut_slice());
    out
}

fn trainable_shapes(model: &SpartaModel) -> Vec<usize> {
    let mut m = model.clone();
    trainable_tensors_mut(&mut m).iter().map(|t| t.len()).collect()
}

/// One query term whose feature is active: its id, the argmax position and
/// `d ln(φ+1) / dφ`.
struct ActiveTerm {
    term: u32,
    position: usize,
    slope: f64,
}

struct CandidateForward {
    trace: encoder::EncoderTrace,
    score: f64,
    active: Vec<ActiveTerm>,
}

fn forward(model: &SpartaModel, query: &Query, candidate: &AnswerCandidate) -> Result<CandidateForward> {
    let truncated = candidate.truncate_to_window(model.max_len)?;
    let trace = encoder::encode_traced(&truncated, &model.encoder)?;
    let table = &model.query_table;
    let mut score = 0.0;
    let mut active = Vec::new();
    for &t in &query.token_ids {
        if t as usize >= table.vocab_size() {
            return Err(Error::TokenOutOfRange {
                id: t,
                vocab_size: table.vocab_size(),
            });
        }
        let m = term_match_slice(table.embedding(t), &trace.encoding, model.scope)?;
        let activation = m.y + table.bias;
        if activation > 0.0 {
            score += activation.ln_1p();
            active.push(ActiveTerm {
                term: t,
                position: m.argmax_position,
                slope: 1.0 / (1.0 + activation),
            });
        }
    }
    Ok(CandidateForward { trace, score, active })
}

fn example_candidates<'a>(example: &TrainingExample, corpus: &'a Corpus) -> Result<Vec<&'a AnswerCandidate>> {
    std::iter::once(example.positive)
        .chain(example.negatives.iter().copied())
        .map(|id| corpus.candidate(id).ok_or(Error::UnknownAnswer(id)))
        .collect()
}

/// Loss to minimise for one example.
pub fn loss(example: &TrainingExample, model: &SpartaModel, corpus: &Corpus, include_positive: bool) -> Result<f64> {
    let scores = example_candidates(example, corpus)?
        .into_iter()
        .map(|c| Ok(forward(model, &example.query, c)?.score))
        .collect::<Result<Vec<f64>>>()?;
    Ok(loss_from_scores(scores[0], &scores[1..], include_positive).0)
}

/// Loss and exact analytic gradients for one example.
pub fn gradients(
    example: &TrainingExample,
    model: &SpartaModel,
    corpus: &Corpus,
    include_positive: bool,
) -> Result<(f64, Gradients)> {
    let forwards = example_candidates(example, corpus)?
        .into_iter()
        .map(|c| forward(model, &example.query, c))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = forwards.iter().map(|f| f.score).collect();
    let (loss, d_positive, d_negatives) = loss_from_scores(scores[0], &scores[1..], include_positive);

    let mut grads = Gradients::zeros_like(model);
    let table = &model.query_table;
    let d = model.dim();
    for (fwd, d_score) in forwards.iter().zip(std::iter::once(d_positive).chain(d_negatives)) {
        if d_score == 0.0 || fwd.active.is_empty() {
            continue;
        }
        let mut upstream = Matrix::zeros(fwd.trace.encoding.len(), d);
        for term in &fwd.active {
            let w = d_score * term.slope;
            grads.bias += w;
            axpy(
                grads.query_embeddings.row_mut(term.term as usize),
                w,
                fwd.trace.encoding.vector(term.position),
            );
            axpy(upstream.row_mut(term.position), w, table.embedding(term.term));
        }
        encoder::backward(&model.encoder, &fwd.trace, &upstream, &mut grads.encoder);
    }
    Ok((loss, grads))
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub negatives: usize,
    /// Nearby-negative radius in candidate ids.
    pub nearby_window: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze_query_embeddings: bool,
    /// Use the negatives-only partition function instead of the softmax over
    /// positive and negatives.
    pub literal_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 20,
            negatives: DEFAULT_NEGATIVES,
            nearby_window: DEFAULT_NEARBY_WINDOW,
            batch_size: 8,
            seed: 42,
            freeze_query_embeddings: true,
            literal_loss: false,
        }
    }
}

impl TrainConfig {
    /// Applies `key=value` lines (`#` comments allowed) on top of `self`.
    pub fn apply_key_values(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |_| Error::InvalidArgument(format!("config line {}: bad value for {key}: {value:?}", lineno + 1));
            match key {
                "lr" => {
                    self.lr = value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                }
                "epochs" => self.epochs = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "negatives" => {
                    self.negatives = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "window" | "nearby_window" => {
                    self.nearby_window = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "batch_size" => {
                    self.batch_size = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "seed" => self.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "freeze_query_embeddings" => {
                    self.freeze_query_embeddings = value
                        .parse()
                        .map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?
                }
                "literal_loss" => {
                    self.literal_loss = value
                        .parse()
                        .map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "config line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.negatives == 0 {
            return Err(Error::InvalidArgument("negatives must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Mean training loss over the epoch's examples (`None` for epoch 0).
    pub mean_loss: Option<f64>,
    pub validation_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SpartaModel,
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// A query paired with its relevant answer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub query: Query,
    pub answer_id: AnswerId,
}

impl LabeledQuery {
    pub fn from_records(records: &[EvalRecord], vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> Vec<Self> {
        records
            .iter()
            .map(|r| LabeledQuery {
                query: Query::new(&r.question, vocab, tokenizer),
                answer_id: r.answer_id,
            })
            .collect()
    }
}

/// MRR of brute-force ranking over the whole corpus.
pub fn validation_mrr(model: &SpartaModel, corpus: &Corpus, queries: &[LabeledQuery]) -> Result<f64> {
    let encodings = model.encode_all(corpus.candidates())?;
    let rankings = queries
        .par_iter()
        .map(|q| {
            let ranked = scoring::rank_brute_force(
                &q.query,
                &encodings,
                &model.query_table,
                encodings.len().max(1),
                model.scope,
            )?;
            Ok(ranked.into_iter().map(|(id, _)| id).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<AnswerId> = queries.iter().map(|q| q.answer_id).collect();
    eval::mrr(&rankings, &gold)
}

/// Trains `model` in place of a copy and returns the snapshot with the best
/// validation MRR (the final parameters when `validation` is empty).
///
/// Runs are deterministic given `config.seed`: negatives are drawn
/// sequentially and per-example gradients are reduced in a fixed order.
pub fn train(
    model: SpartaModel,
    corpus: &Corpus,
    examples: &[LabeledQuery],
    validation: &[LabeledQuery],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in examples {
        if corpus.candidate(ex.answer_id).is_none() {
            return Err(Error::UnknownAnswer(ex.answer_id));
        }
    }
    if corpus.len() <= config.negatives {
        return Err(Error::CorpusTooSmall {
            corpus_size: corpus.len(),
            count: config.negatives,
        });
    }
    let mut model = model;
    model.query_table.trainable_embeddings = !config.freeze_query_embeddings;
    let include_positive = !config.literal_loss;
    let mut adam = AdamState::new(
        &trainable_shapes(&model),
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let evaluate = |m: &SpartaModel| -> Result<Option<f64>> {
        if validation.is_empty() {
            Ok(None)
        } else {
            validation_mrr(m, corpus, validation).map(Some)
        }
    };
    let initial_mrr = evaluate(&model)?;
    let mut curve = vec![EpochStats {
        epoch: 0,
        mean_loss: None,
        validation_mrr: initial_mrr,
    }];
    let mut best = (initial_mrr.unwrap_or(f64::NEG_INFINITY), 0usize, model.clone());

    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_examples = batch
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let positive = corpus.candidate(ex.answer_id).expect("checked above");
                    let negatives = sample_negatives(
                        positive,
                        corpus.candidates(),
                        config.negatives,
                        config.nearby_window,
                        &mut rng,
                    )?;
                    TrainingExample::new(ex.query.clone(), ex.answer_id, negatives)
                })
                .collect::<Result<Vec<_>>>()?;
            let per_example = batch_examples
                .par_iter()
                .map(|ex| gradients(ex, &model, corpus, include_positive))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Gradients::zeros_like(&model);
            let scale = 1.0 / per_example.len() as f64;
            for (l, g) in &per_example {
                loss_sum += l;
                total.add_scaled(g, scale);
            }
            let train_embeddings = model.query_table.trainable_embeddings;
            let grads = total.tensors(train_embeddings);
            adam.step(&mut trainable_tensors_mut(&mut model), &grads)?;
        }
        let mrr = evaluate(&model)?;
        curve.push(EpochStats {
            epoch,
            mean_loss: Some(loss_sum / examples.len() as f64),
            validation_mrr: mrr,
        });
        let current = mrr.unwrap_or(f64::NEG_INFINITY);
        if validation.is_empty() || current >= best.0 {
            best = (current, epoch, model.clone());
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        curve,
        best_epoch: best.1,
    })
}


#[cfg(test)]
mod gradient_check {
    use super::*;
    use crate::corpus::CorpusRecord;
    use crate::linalg::dot;
    use crate::text::{SimpleTokenizer, Vocabulary};
    use rand::Rng;

    fn perturbed(model: &SpartaModel, tensor: usize, index: usize, delta: f64) -> SpartaModel {
        let mut m = model.clone();
        trainable_tensors_mut(&mut m)[tensor][index] += delta;
        m
    }

    /// Smallest distance to a ReLU threshold or a max-pool tie.
    fn kink_margin(model: &SpartaModel, example: &TrainingExample, corpus: &Corpus) -> f64 {
        let mut margin = f64::INFINITY;
        for c in example_candidates(example, corpus).unwrap() {
            let enc = model.encode(c).unwrap();
            for &t in &example.query.token_ids {
                let mut dots: Vec<f64> = (0..enc.len())
                    .map(|j| dot(model.query_table.embedding(t), enc.vector(j)))
                    .collect();
                dots.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min((dots[0] + model.query_table.bias).abs());
                if dots.len() > 1 {
                    margin = margin.min(dots[0] - dots[1]);
                }
            }
        }
        margin
    }

    fn small_corpus() -> (Vocabulary, Corpus) {
        let texts = ["red apple", "blue ocean", "green tree"];
        let records = texts
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusRecord {
                id: i as u32,
                answer: t.to_string(),
                context_left: String::new(),
                context_right: String::new(),
                doc: None,
            })
            .collect();
        let vocab = Vocabulary::build(texts.iter(), 1, &SimpleTokenizer).unwrap();
        let corpus = Corpus::from_records(records, &vocab, &SimpleTokenizer).unwrap();
        (vocab, corpus)
    }

    #[test]
    fn duplicated_token_doubles_embedding_gradient() {
        let (vocab, corpus) = small_corpus();
        let mut model = SpartaModel::init(vocab.clone(), 4, 1, 9);
        model.query_table.trainable_embeddings = true;
        model.query_table.bias = 0.5;
        let t = vocab.id("apple").unwrap();
        // literal loss with one negative is linear in both scores
        let once = TrainingExample::new(Query::from_ids(vec![t], &vocab).unwrap(), 0, vec![1]).unwrap();
        let twice = TrainingExample::new(Query::from_ids(vec![t, t], &vocab).unwrap(), 0, vec![1]).unwrap();
        let g1 = gradients(&once, &model, &corpus, false).unwrap().1;
        let g2 = gradients(&twice, &model, &corpus, false).unwrap().1;
        assert!(g1.query_embeddings.row(t as usize).iter().any(|&v| v != 0.0));
        for (a, b) in g1
            .query_embeddings
            .row(t as usize)
            .iter()
            .zip(g2.query_embeddings.row(t as usize))
        {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn fully_clipped_features_give_zero_bias_and_embedding_gradients() {
        let (vocab, corpus) = small_corpus();
        let mut model = SpartaModel::init(vocab.clone(), 4, 1, 9);
        model.query_table.trainable_embeddings = true;
        model.query_table.bias = -1e9;
        let q = Query::from_ids(vec![0, 1, 2], &vocab).unwrap();
        let ex = TrainingExample::new(q, 0, vec![1, 2]).unwrap();
        for include_positive in [true, false] {
            let (_, g) = gradients(&ex, &model, &corpus, include_positive).unwrap();
            assert_eq!(g.bias, 0.0);
            assert!(g.query_embeddings.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn analytic_matches_central_differences() {
        let texts = [
            "red apple fruit tree",
            "blue ocean water",
            "green forest tree leaf",
            "yellow sun light",
        ];
        let records: Vec<CorpusRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusRecord {
                id: i as u32,
                answer: t.to_string(),
                context_left: "the".into(),
                context_right: String::new(),
                doc: None,
            })
            .collect();
        let vocab = Vocabulary::build(texts.iter().chain(&["the"]), 1, &SimpleTokenizer).unwrap();
        let corpus = Corpus::from_records(records, &vocab, &SimpleTokenizer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for seed in 0..12u64 {
            let mut model = SpartaModel::init(vocab.clone(), 4, 1, seed);
            model.query_table.trainable_embeddings = true;
            for t in trainable_tensors_mut(&mut model) {
                for v in t.iter_mut() {
                    *v = rng.gen_range(-0.8..0.8);
                }
            }
            let ids: Vec<u32> = (0..3).map(|_| rng.gen_range(0..vocab.len() as u32)).collect();
            let example = TrainingExample::new(Query::from_ids(ids, &vocab).unwrap(), 0, vec![2, 3]).unwrap();
            if kink_margin(&model, &example, &corpus) < 1e-6 {
                continue;
            }
            for include_positive in [true, false] {
                let (_, grads) = gradients(&example, &model, &corpus, include_positive).unwrap();
                let analytic = grads.tensors(true);
                let h = 1e-5;
                for (ti, tensor) in analytic.iter().enumerate() {
                    let mut diff = 0.0f64;
                    let mut norm = 0.0f64;
                    for (i, &a) in tensor.iter().enumerate() {
                        let up = loss(&example, &perturbed(&model, ti, i, h), &corpus, include_positive).unwrap();
                        let down = loss(&example, &perturbed(&model, ti, i, -h), &corpus, include_positive).unwrap();
                        let numeric = (up - down) / (2.0 * h);
                        diff += (a - numeric).powi(2);
                        norm += a.powi(2).max(numeric.powi(2));
                    }
                    if norm > 0.0 {
                        let rel = (diff / norm).sqrt();
                        assert!(
                            rel < 1e-4,
                            "seed {seed} tensor {ti} include_positive {include_positive}: {rel}"
                        );
                    }
                }
            }
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} instances away from kinks");
    }
}
