//! `rext` — chemical–protein relation extraction from abstract corpora.
//!
//! Subcommands cover the full pipeline: `stats`, `preprocess`,
//! `build-vocab`, `train`, `predict`, `evaluate`. Every run is
//! deterministic given its flags and `--seed`; diagnostics go to stderr,
//! data to stdout or the requested output files.

mod config;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::Settings;
use rext_core::checkpoint::Checkpoint;
use rext_core::corpus::{
    assemble_corpus, corpus_stats, parse_abstracts, parse_entities, parse_relations, Corpus,
    RelationLabel,
};
use rext_core::eval::{
    confusion, micro_metrics, predict, report, tuple_of_annotation, write_predictions,
};
use rext_core::preprocess::{preprocess_corpus, read_examples_tsv, write_examples_tsv};
use rext_core::tokenizer::{build_vocab, encode, Vocabulary};
use rext_core::train::train;

#[derive(Parser)]
#[command(name = "rext", version, about = "Chemical-protein relation extraction pipeline")]
struct Cli {
    /// Flat key=value config file ('#' comments); flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for initialization, sampling and dropout
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus, print its statistics
    Stats(CorpusArgs),
    /// Run preprocessing and write a tagged-examples TSV
    Preprocess(PreprocessArgs),
    /// Build a vocabulary file from an examples TSV
    BuildVocab(BuildVocabArgs),
    /// Train a classifier and write a checkpoint
    Train(TrainArgs),
    /// Predict relation tuples from examples or a raw corpus
    Predict(PredictArgs),
    /// Score a prediction file against gold relations
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Abstracts TSV: pmid, title, abstract
    #[arg(long)]
    abstracts: PathBuf,
    /// Entities TSV: pmid, eid, type, start, end, surface
    #[arg(long)]
    entities: PathBuf,
    /// Relations TSV: pmid, label, Arg1:<eid>, Arg2:<eid>
    #[arg(long)]
    relations: PathBuf,
}

#[derive(Args)]
struct SplitterArgs {
    /// Words that never end a sentence (comma-separated)
    #[arg(long)]
    non_terminal_tokens: Option<String>,
    /// Additional abbreviation words suppressing a split (comma-separated)
    #[arg(long)]
    abbreviations: Option<String>,
}

impl SplitterArgs {
    fn apply(&self, settings: &mut Settings) {
        if let Some(v) = &self.non_terminal_tokens {
            settings.set("non_terminal_tokens", v.clone());
        }
        if let Some(v) = &self.abbreviations {
            settings.set("abbreviations", v.clone());
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output examples TSV
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    splitter: SplitterArgs,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Examples TSV from `preprocess`
    #[arg(long)]
    examples: PathBuf,
    /// Output vocabulary file (one token per line)
    #[arg(long)]
    out: PathBuf,
    /// Minimum corpus frequency for a token to enter the vocabulary
    #[arg(long)]
    min_frequency: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Classification head: model1 | rbert-cnn
    #[arg(long)]
    head: Option<String>,
    /// Include the CLS path in the rbert-cnn head: on | off
    #[arg(long)]
    cls_path: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    attention_heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, settings: &mut Settings) {
        let pairs: [(&str, Option<String>); 10] = [
            ("head", self.head.clone()),
            ("cls_path", self.cls_path.clone()),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("attention_heads", self.attention_heads.map(|v| v.to_string())),
            ("ff_dim", self.ff_dim.map(|v| v.to_string())),
            ("head_dim", self.head_dim.map(|v| v.to_string())),
            ("max_positions", self.max_positions.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("max_len", self.max_len.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                settings.set(k, v);
            }
        }
    }
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    gradient_accumulation_steps: Option<usize>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
}

impl OptimArgs {
    fn apply(&self, settings: &mut Settings) {
        let pairs: [(&str, Option<String>); 7] = [
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            (
                "gradient_accumulation_steps",
                self.gradient_accumulation_steps.map(|v| v.to_string()),
            ),
            ("max_grad_norm", self.max_grad_norm.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("warmup_steps", self.warmup_steps.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                settings.set(k, v);
            }
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Examples TSV from `preprocess`
    #[arg(long)]
    examples: PathBuf,
    /// Vocabulary file from `build-vocab`
    #[arg(long)]
    vocab: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Append per-epoch metrics to this file (stderr otherwise)
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Examples TSV (mutually exclusive with --abstracts/--entities)
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Raw abstracts TSV (requires --entities)
    #[arg(long, requires = "entities")]
    abstracts: Option<PathBuf>,
    /// Raw entities TSV (requires --abstracts)
    #[arg(long, requires = "abstracts")]
    entities: Option<PathBuf>,
    /// Output predictions TSV
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    splitter: SplitterArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions TSV (relations-file format)
    #[arg(long)]
    pred: PathBuf,
    /// Gold relations TSV
    #[arg(long)]
    gold: PathBuf,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn base_settings(config: Option<&Path>, seed: Option<u64>) -> Result<Settings> {
    let mut settings = match config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    if let Some(seed) = seed {
        settings.set("seed", seed.to_string());
    }
    Ok(settings)
}

fn run(cli: Cli) -> Result<()> {
    let settings = base_settings(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Stats(args) => cmd_stats(&args),
        Command::Preprocess(args) => cmd_preprocess(&args, settings),
        Command::BuildVocab(args) => cmd_build_vocab(&args, settings),
        Command::Train(args) => cmd_train(&args, settings),
        Command::Predict(args) => cmd_predict(&args, settings),
        Command::Evaluate(args) => cmd_evaluate(&args),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let docs = parse_abstracts(&read_file(&args.abstracts)?)
        .with_context(|| format!("in {}", args.abstracts.display()))?;
    let ents = parse_entities(&read_file(&args.entities)?)
        .with_context(|| format!("in {}", args.entities.display()))?;
    let rels = parse_relations(&read_file(&args.relations)?)
        .with_context(|| format!("in {}", args.relations.display()))?;
    Ok(assemble_corpus(docs, ents, rels)?)
}

fn cmd_stats(args: &CorpusArgs) -> Result<()> {
    let corpus = load_corpus(args)?;
    let stats = corpus_stats(&corpus);
    println!("documents: {}", stats.n_documents);
    println!("chemicals: {}", stats.n_chemicals);
    println!("proteins: {}", stats.n_proteins);
    println!("positive relations: {}", stats.n_positive_relations);
    for label in RelationLabel::CORPUS_LABELS {
        println!("{}: {}", label, stats.per_label_counts[&label]);
    }
    Ok(())
}

fn cmd_preprocess(args: &PreprocessArgs, mut settings: Settings) -> Result<()> {
    args.splitter.apply(&mut settings);
    let splitter = settings.splitter_config()?;
    let corpus = load_corpus(&args.corpus)?;
    let (examples, stats) = preprocess_corpus(&corpus, &splitter)?;
    fs::write(&args.out, write_examples_tsv(&examples))
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    eprintln!("documents: {}", stats.documents);
    eprintln!("sentences: {}", stats.sentences);
    eprintln!("candidate pairs: {}", stats.candidate_pairs);
    eprintln!("examples written: {}", stats.examples);
    eprintln!("cross-sentence skipped: {}", stats.cross_sentence_skipped);
    eprintln!("overlapping pairs skipped: {}", stats.overlap_skipped);
    eprintln!("rare-label pairs dropped: {}", stats.rare_label_dropped);
    eprintln!("multi-label pairs resolved: {}", stats.multi_label_resolved);
    Ok(())
}

fn cmd_build_vocab(args: &BuildVocabArgs, mut settings: Settings) -> Result<()> {
    if let Some(v) = args.min_frequency {
        settings.set("min_frequency", v.to_string());
    }
    let examples = read_examples_tsv(&read_file(&args.examples)?)?;
    let vocab = build_vocab(&examples, settings.min_frequency()?)?;
    fs::write(&args.out, vocab.to_file_string())
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    eprintln!("vocabulary size: {}", vocab.len());
    Ok(())
}

fn encode_all(
    examples: &[rext_core::preprocess::RelationExample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Vec<rext_core::tokenizer::EncodedExample>, usize)> {
    let mut encoded = Vec::with_capacity(examples.len());
    let mut skipped = 0;
    for ex in examples {
        match encode(ex, vocab, max_len)? {
            Some(e) => encoded.push(e),
            None => skipped += 1,
        }
    }
    Ok((encoded, skipped))
}

fn cmd_train(args: &TrainArgs, mut settings: Settings) -> Result<()> {
    args.model.apply(&mut settings);
    args.optim.apply(&mut settings);
    let max_len = settings.max_len()?;
    let vocab = Vocabulary::from_file_string(&read_file(&args.vocab)?)?;
    let examples = read_examples_tsv(&read_file(&args.examples)?)?;
    let (encoded, skipped) = encode_all(&examples, &vocab, max_len)?;
    if skipped > 0 {
        eprintln!("examples skipped by truncation: {skipped}");
    }
    let model_cfg = settings.model_config(vocab.len())?;
    let train_cfg = settings.train_config()?;
    eprintln!(
        "training on {} examples (head {}, hidden {}, layers {})",
        encoded.len(),
        model_cfg.head.as_str(),
        model_cfg.hidden,
        model_cfg.layers
    );
    let outcome = train(&encoded, &model_cfg, &train_cfg, &vocab, max_len)?;
    let log_lines: String =
        outcome.epochs.iter().map(|e| e.log_line() + "\n").collect();
    match &args.log {
        Some(path) => {
            use std::io::Write;
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("cannot open log {}", path.display()))?;
            f.write_all(log_lines.as_bytes())?;
        }
        None => eprint!("{log_lines}"),
    }
    outcome.checkpoint.save(&args.out)?;
    eprintln!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: &PredictArgs, mut settings: Settings) -> Result<()> {
    args.splitter.apply(&mut settings);
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let examples = match (&args.examples, &args.abstracts, &args.entities) {
        (Some(path), None, None) => read_examples_tsv(&read_file(path)?)?,
        (None, Some(abstracts), Some(entities)) => {
            let docs = parse_abstracts(&read_file(abstracts)?)?;
            let ents = parse_entities(&read_file(entities)?)?;
            let corpus = assemble_corpus(docs, ents, vec![])?;
            let (examples, stats) = preprocess_corpus(&corpus, &settings.splitter_config()?)?;
            eprintln!(
                "generated {} candidate examples from {} documents",
                examples.len(),
                stats.documents
            );
            examples
        }
        _ => bail!("pass either --examples or both --abstracts and --entities"),
    };
    let (encoded, skipped) = encode_all(&examples, &ckpt.vocab, ckpt.meta.max_len)?;
    if skipped > 0 {
        eprintln!("examples skipped by truncation: {skipped}");
    }
    let preds = predict(&ckpt, &encoded)?;
    fs::write(&args.out, write_predictions(&preds))
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    eprintln!("{} predictions written to {}", preds.len(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let pred_rels = parse_relations(&read_file(&args.pred)?)
        .with_context(|| format!("in {}", args.pred.display()))?;
    let gold_rels = parse_relations(&read_file(&args.gold)?)
        .with_context(|| format!("in {}", args.gold.display()))?;

    let gold_kept: Vec<_> = gold_rels.iter().filter(|r| !r.label.is_deleted()).collect();
    let dropped = gold_rels.len() - gold_kept.len();
    if dropped > 0 {
        eprintln!("gold tuples with removed rare labels ignored: {dropped}");
    }
    let pred_set: BTreeSet<_> = pred_rels.iter().map(tuple_of_annotation).collect();
    let gold_set: BTreeSet<_> = gold_kept.iter().map(|r| tuple_of_annotation(r)).collect();

    let counts = confusion(&pred_set, &gold_set);
    let metrics = micro_metrics(&counts);
    let text = report(&metrics);
    print!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
