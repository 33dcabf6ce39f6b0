//! `sparta` command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sparta::bm25::Bm25Index;
use sparta::corpus::{read_jsonl, write_jsonl, DEFAULT_MAX_LEN};
use sparta::encoder::{import_encodings, AnswerEncoding, DEFAULT_DIM, DEFAULT_WINDOW};
use sparta::eval::{evaluate, Ranker};
use sparta::index::{build_index, DEFAULT_TOP_K};
use sparta::rankers::{Bm25Ranker, SpartaRanker};
use sparta::scoring::MatchScope;
use sparta::synthetic::{generate, SyntheticConfig};
use sparta::training::{train, LabeledQuery, TrainConfig};
use sparta::{Corpus, CorpusRecord, EvalRecord, InvertedIndex, Query, SimpleTokenizer, SpartaModel, Vocabulary};

#[derive(Debug, Parser)]
#[command(name = "sparta", version, about = "Learned sparse retrieval with a BM25 baseline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a corpus and labelled questions.
    Train(TrainArgs),
    /// Precompute the sparse vectors of every answer into an index file.
    Index(IndexArgs),
    /// Rank answers for one question with a model index.
    Search(SearchArgs),
    /// Compute MRR and recall over an eval file.
    Eval(EvalArgs),
    /// Show the highest-scoring vocabulary terms of answers.
    Inspect(InspectArgs),
    /// Build the BM25 baseline index.
    #[command(name = "bm25-index")]
    Bm25Index(Bm25IndexArgs),
    /// Rank answers for one question with BM25.
    #[command(name = "bm25-search")]
    Bm25Search(Bm25SearchArgs),
    /// Write the synthetic paraphrase corpus and question files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Training questions (JSON lines with qid, question, answer_id).
    #[arg(long)]
    pub queries: PathBuf,
    /// Validation questions; the epoch with the best MRR on them is kept.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Loss curve output; defaults to the model path with `.curve.json`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// key=value file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub d: usize,
    /// Encoder context window (tokens on each side).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Radius in candidate ids for nearby negatives.
    #[arg(long)]
    pub nearby: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "BOOL")]
    pub freeze_query_embeddings: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub literal_loss: Option<bool>,
    #[arg(long, value_name = "BOOL", default_value_t = false, action = clap::ArgAction::Set)]
    pub answer_only_max: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    /// Precomputed answer encodings (JSON lines with id, vectors) used instead
    /// of the model's encoder.
    #[arg(long)]
    pub encodings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Terms kept per answer; 0 keeps all.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_name = "BOOL", default_value_t = false, action = clap::ArgAction::Set)]
    pub answer_only_max: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Model whose vocabulary the index was built with.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Corpus for printing answer text.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model index; requires --model.
    #[arg(long, conflicts_with = "bm25")]
    pub index: Option<PathBuf>,
    #[arg(long, requires = "index")]
    pub model: Option<PathBuf>,
    /// BM25 index instead of a model index.
    #[arg(long)]
    pub bm25: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    /// Recall cutoffs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Report output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "all")]
    pub answer_id: Option<u32>,
    /// Emit every answer as a JSON line.
    #[arg(long, conflicts_with = "answer_id")]
    pub all: bool,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct Bm25IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Bm25SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving corpus.jsonl, train.jsonl and heldout.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SyntheticConfig::default().seed)]
    pub seed: u64,
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => run_train(args, out),
        Command::Index(args) => run_index(args, out),
        Command::Search(args) => run_search(args, out),
        Command::Eval(args) => run_eval(args, out),
        Command::Inspect(args) => run_inspect(args, out),
        Command::Bm25Index(args) => run_bm25_index(args, out),
        Command::Bm25Search(args) => run_bm25_search(args, out),
        Command::Synth(args) => run_synth(args, out),
    }
}

fn load_corpus_records(path: &Path) -> Result<Vec<CorpusRecord>> {
    Ok(read_jsonl(path)?)
}

fn load_eval(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(read_jsonl(path)?)
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        config = config.apply_key_values(&text)?;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.negatives {
        config.negatives = v;
    }
    if let Some(v) = args.nearby {
        config.nearby_window = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.freeze_query_embeddings {
        config.freeze_query_embeddings = v;
    }
    if let Some(v) = args.literal_loss {
        config.literal_loss = v;
    }
    config.validate()?;
    Ok(config)
}

fn run_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = train_config(&args)?;
    if args.d == 0 {
        bail!("--d must be at least 1");
    }
    let records = load_corpus_records(&args.corpus)?;
    let train_records = load_eval(&args.queries)?;
    let valid_records = match &args.valid {
        Some(path) => load_eval(path)?,
        None => Vec::new(),
    };
    let texts = records
        .iter()
        .map(CorpusRecord::full_text)
        .chain(train_records.iter().map(|r| r.question.clone()));
    let vocab = Vocabulary::build(texts, 1, &SimpleTokenizer)?;
    let corpus = Corpus::from_records(records, &vocab, &SimpleTokenizer)?;
    let examples = LabeledQuery::from_records(&train_records, &vocab, &SimpleTokenizer);
    let validation = LabeledQuery::from_records(&valid_records, &vocab, &SimpleTokenizer);

    let mut model = SpartaModel::init(vocab, args.d, args.window, config.seed);
    model.scope = MatchScope::from_answer_only(args.answer_only_max);
    model.max_len = args.max_len;
    let outcome = train(model, &corpus, &examples, &validation, &config)?;
    outcome.model.save(&args.model)?;

    let curve_path = args
        .curve
        .clone()
        .unwrap_or_else(|| with_suffix(&args.model, ".curve.json"));
    let curve = serde_json::to_string_pretty(&outcome.curve)?;
    std::fs::write(&curve_path, curve + "\n").with_context(|| format!("{}", curve_path.display()))?;
    for stats in &outcome.curve {
        writeln!(
            out,
            "epoch {:>3}  loss {}  valid_mrr {}",
            stats.epoch,
            stats.mean_loss.map_or("-".into(), |l| format!("{l:.6}")),
            stats.validation_mrr.map_or("-".into(), |m| format!("{m:.4}"))
        )?;
    }
    writeln!(
        out,
        "kept epoch {}; model written to {}",
        outcome.best_epoch,
        args.model.display()
    )?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn run_index(args: IndexArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = SpartaModel::load(&args.model)?;
    model.scope = MatchScope::from_answer_only(args.answer_only_max);
    model.max_len = args.max_len;
    let encodings: Vec<AnswerEncoding> = match (&args.encodings, &args.corpus) {
        (Some(path), _) => {
            let map = import_encodings(path)?;
            for (position, (&id, enc)) in map.iter().enumerate() {
                if id as usize != position {
                    bail!("{}: answer ids must be 0..N-1, missing {position}", path.display());
                }
                if enc.dim() != model.dim() {
                    bail!(
                        "{}: encoding dim {} does not match model dim {}",
                        path.display(),
                        enc.dim(),
                        model.dim()
                    );
                }
            }
            map.into_values().collect()
        }
        (None, Some(path)) => {
            let corpus = Corpus::from_records(load_corpus_records(path)?, &model.vocab, &SimpleTokenizer)?;
            model.encode_all(corpus.candidates())?
        }
        (None, None) => bail!("index needs --corpus or --encodings"),
    };
    let index = build_index(
        &encodings,
        &model.query_table,
        args.top_k,
        model.scope,
        model.vocab.fingerprint(),
    )?;
    index.save(&args.out)?;
    writeln!(
        out,
        "{} answers, {} terms with postings, {} postings ({:.1} terms per answer)",
        index.num_answers(),
        index.num_terms_with_postings(),
        index.num_postings(),
        index.mean_terms_per_answer()
    )?;
    Ok(())
}

fn print_results(out: &mut dyn Write, results: &[(u32, f64)], corpus: Option<&Path>) -> Result<()> {
    let records = match corpus {
        Some(path) => Some(load_corpus_records(path)?),
        None => None,
    };
    for (rank, &(id, score)) in results.iter().enumerate() {
        let text = records
            .as_ref()
            .and_then(|r| r.get(id as usize))
            .map(|r| format!("\t{}", r.answer))
            .unwrap_or_default();
        writeln!(out, "{}\t{}\t{:.6}{}", rank + 1, id, score, text)?;
    }
    Ok(())
}

fn run_search(args: SearchArgs, out: &mut dyn Write) -> Result<()> {
    let model = SpartaModel::load(&args.model)?;
    let index = InvertedIndex::load(&args.index)?;
    let query = Query::new(&args.query, &model.vocab, &SimpleTokenizer);
    let results = index.query(&query, args.k)?;
    print_results(out, &results, args.corpus.as_deref())
}

fn run_eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_eval(&args.queries)?;
    let report = match (&args.index, &args.model, &args.bm25) {
        (Some(index_path), Some(model_path), None) => {
            let model = SpartaModel::load(model_path)?;
            let index = InvertedIndex::load(index_path)?;
            let ranker = SpartaRanker {
                index: &index,
                vocab: &model.vocab,
                tokenizer: &SimpleTokenizer,
            };
            evaluate_all(&ranker, index.num_answers(), &records, &args.k)?
        }
        (None, None, Some(path)) => {
            let (index, vocab) = Bm25Index::load(path)?;
            let ranker = Bm25Ranker {
                index: &index,
                vocab: &vocab,
                tokenizer: &SimpleTokenizer,
            };
            evaluate_all(&ranker, index.num_docs(), &records, &args.k)?
        }
        _ => bail!("eval needs either --index with --model, or --bm25"),
    };
    let json = report.to_json() + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("{}", path.display()))?,
        None => out.write_all(json.as_bytes())?,
    }
    Ok(())
}

fn evaluate_all(
    ranker: &dyn Ranker,
    num_answers: usize,
    records: &[EvalRecord],
    k_list: &[usize],
) -> Result<sparta::eval::EvalReport> {
    Ok(evaluate(ranker, num_answers, records, k_list, num_answers.max(1))?)
}

fn run_inspect(args: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let model = SpartaModel::load(&args.model)?;
    let index = InvertedIndex::load(&args.index)?;
    if index.vocab_fingerprint() != model.vocab.fingerprint() {
        return Err(sparta::Error::VocabularyMismatch {
            index: index.vocab_fingerprint(),
            vocab: model.vocab.fingerprint(),
        }
        .into());
    }
    if args.all {
        for id in 0..index.num_answers() as u32 {
            let terms = index.top_k_terms(&model.vocab, id, args.k)?;
            let line = serde_json::json!({ "answer_id": id, "terms": terms });
            writeln!(out, "{line}")?;
        }
    } else {
        let id = args.answer_id.expect("clap requires --answer-id without --all");
        for (rank, (term, score)) in index.top_k_terms(&model.vocab, id, args.k)?.into_iter().enumerate() {
            writeln!(out, "{}\t{}\t{:.4}", rank + 1, term, score)?;
        }
    }
    Ok(())
}

fn run_bm25_index(args: Bm25IndexArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_corpus_records(&args.corpus)?;
    let vocab = Vocabulary::build(records.iter().map(CorpusRecord::full_text), 1, &SimpleTokenizer)?;
    let corpus = Corpus::from_records(records, &vocab, &SimpleTokenizer)?;
    let index = Bm25Index::build(corpus.candidates(), vocab.fingerprint())?;
    index.save(&vocab, &args.out)?;
    writeln!(
        out,
        "{} documents, average length {:.2}",
        index.num_docs(),
        index.avg_doc_length()
    )?;
    Ok(())
}

fn run_bm25_search(args: Bm25SearchArgs, out: &mut dyn Write) -> Result<()> {
    let (index, vocab) = Bm25Index::load(&args.index)?;
    let query = Query::new(&args.query, &vocab, &SimpleTokenizer);
    let results = index.search(&query, args.k)?;
    print_results(out, &results, args.corpus.as_deref())
}

fn run_synth(args: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let data = generate(&SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    })?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("{}", args.out.display()))?;
    write_jsonl(&args.out.join("corpus.jsonl"), &data.corpus)?;
    write_jsonl(&args.out.join("train.jsonl"), &data.train)?;
    write_jsonl(&args.out.join("heldout.jsonl"), &data.heldout)?;
    writeln!(
        out,
        "{} answers, {} training and {} held-out questions in {}",
        data.corpus.len(),
        data.train.len(),
        data.heldout.len(),
        args.out.display()
    )?;
    Ok(())
}
