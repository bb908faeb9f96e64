//! `seqtag`: train, apply and evaluate BiLSTM-CRF taggers.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage or
//! configuration errors. Log verbosity follows `RUST_LOG`.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use seqtag::data::{
    iob_to_iobes, iobes_to_iob, parse_alternatives, parse_conll, read_conll, read_tokens, tags_to_spans,
    Dictionary, LabeledSentence, SpanAnnotation,
};
use seqtag::embeddings::{build_vocab, load_pretrained, EmbeddingTable};
use seqtag::eval::{alternative_match_counts, exact_match_counts, AlternativeSet, MatchCounts};
use seqtag::math::RngSeed;
use seqtag::model::gradcheck::{run_gradcheck, GradcheckOptions, MAX_HIDDEN};
use seqtag::model::{build_model, DictionaryMode, Model, ModelConfig, ShareMode, TaskSpec};
use seqtag::train::{train_with, TaskData};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "seqtag", version, about = "Multi-task BiLSTM-CRF sequence tagger")]
struct Cli {
    /// Worker threads for inference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Tag a tokenized corpus with a trained model.
    Tag(TagArgs),
    /// Score predicted tags against gold tags.
    Eval(EvalArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
    /// Convert a corpus between IOB and IOBES.
    ConvertTags(ConvertArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<ShareMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Line-delimited JSON training report (default: next to the checkpoint).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dictionary_mode: Option<DictionaryMode>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task whose output layer is used; optional for single-task models.
    #[arg(long)]
    task: Option<String>,
    /// Tokens in the first column, sentences separated by blank lines.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    alternatives: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 5)]
    max_words: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Restrict to these modes (default: all).
    #[arg(long, value_delimiter = ',')]
    modes: Vec<ShareMode>,
    /// Corrupt one analytic gradient block; the check must then fail.
    #[arg(long, hide = true)]
    sabotage: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Iob,
    Iobes,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    to: Scheme,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// An error caused by the invocation rather than the run.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    anyhow!(Usage(format!("{e:#}")))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|c| {
        c.is::<Usage>()
            || matches!(
                c.downcast_ref::<seqtag::Error>(),
                Some(seqtag::Error::Config(_) | seqtag::Error::UnknownTask(_))
            )
    });
    if is_usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("cannot start thread pool")
        .and_then(|_| run(cli.command));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ConvertTags(a) => cmd_convert(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reads a tagged corpus and normalizes its tags to IOBES.
fn read_corpus(path: &Path) -> Result<Vec<LabeledSentence>> {
    let mut sentences = parse_conll(path)?;
    for s in &mut sentences {
        s.tags = iob_to_iobes(&s.tags);
    }
    Ok(sentences)
}

fn entity_types(sentences: &[LabeledSentence]) -> Vec<String> {
    let types: BTreeSet<String> = sentences
        .iter()
        .flat_map(|s| s.spans())
        .map(|sp| sp.entity_type)
        .collect();
    types.into_iter().collect()
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config).map_err(usage)?;
    cfg.apply(&Overrides {
        mode: a.mode,
        seed: a.seed,
        checkpoint: a.checkpoint,
        report: a.report,
        max_epochs: a.epochs,
        dictionary_mode: a.dictionary_mode,
    });
    cfg.validate().map_err(usage)?;
    let seed = RngSeed(cfg.seed);

    let mut data = Vec::with_capacity(cfg.tasks.len());
    let mut tests = Vec::with_capacity(cfg.tasks.len());
    let mut specs = Vec::with_capacity(cfg.tasks.len());
    for t in &cfg.tasks {
        let train = read_corpus(&t.train)?;
        let dev = read_corpus(&t.dev)?;
        let types = t.entity_types.clone().unwrap_or_else(|| entity_types(&train));
        if types.is_empty() {
            return Err(usage(format!("task {}: no entity types given or found in {}", t.name, t.train.display())));
        }
        specs.push(TaskSpec::new(&t.name, &types, t.lambda).map_err(usage)?);
        tests.push(t.test.as_deref().map(read_corpus).transpose()?);
        data.push(TaskData { train, dev });
    }

    let vocab = build_vocab(
        data.iter().flat_map(|d| d.train.iter().flat_map(|s| s.tokens.iter().map(String::as_str))),
        cfg.min_freq,
    )?;
    let table = match &cfg.embeddings {
        Some(p) => load_pretrained(p, &vocab, cfg.dims.word_dim, seed.derive(1))?,
        None => EmbeddingTable::random(&vocab, cfg.dims.word_dim, seed.derive(1))?,
    };
    log::info!(
        "vocabulary {} words, {} with pretrained vectors",
        vocab.num_words(),
        table.coverage.found
    );
    let dictionaries = if cfg.dictionary_mode == DictionaryMode::Off {
        Vec::new()
    } else {
        cfg.dictionaries
            .iter()
            .map(|d| Dictionary::load(&d.entity_type, &d.path))
            .collect::<seqtag::Result<Vec<_>>>()?
    };
    let model_cfg = ModelConfig {
        mode: cfg.mode,
        dims: cfg.dims,
        tasks: specs,
        dictionary_mode: cfg.dictionary_mode,
        constrained_decoding: cfg.constrained_decoding,
    };
    let model = build_model(model_cfg, vocab, &table, dictionaries, seed.derive(2))?;

    let (model, report) = train_with(model, &data, &cfg.train_config(), |r| {
        let per_task: Vec<String> = r.tasks.iter().map(|t| format!("{} {:.4}", t.task, t.dev.f1)).collect();
        println!(
            "epoch {:3}  lr {:.6}  dev F1 {}  mean {:.4}{}",
            r.epoch,
            r.lr,
            per_task.join("  "),
            r.dev_score,
            if r.improved { "  *" } else { "" }
        );
    })?;
    model.save(&cfg.checkpoint)?;
    let report_path = cfg.report.clone().unwrap_or_else(|| cfg.checkpoint.with_extension("report.jsonl"));
    let file = File::create(&report_path).with_context(|| format!("cannot create {}", report_path.display()))?;
    report.write_jsonl(BufWriter::new(file))?;
    println!(
        "best epoch {} (dev {:.4}); {} epochs in {:.1}s; checkpoint {}",
        report.best_epoch,
        report.best_dev_score,
        report.epochs.len(),
        report.wall_time.as_secs_f64(),
        cfg.checkpoint.display()
    );

    for (task, test) in tests.iter().enumerate() {
        if let Some(test) = test {
            let pred = tag_sentences(&model, task, test.iter().map(|s| s.tokens.clone()).collect())?;
            let pred: Vec<Vec<SpanAnnotation>> = pred.iter().map(|t| tags_to_spans(t)).collect();
            let gold: Vec<Vec<SpanAnnotation>> = test.iter().map(LabeledSentence::spans).collect();
            let s = exact_match_counts(&pred, &gold)?.score();
            println!(
                "test {}: P {:.4} R {:.4} F1 {:.4}",
                model.tasks()[task].name,
                s.precision,
                s.recall,
                s.f1
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn tag_sentences(model: &Model, task: usize, sentences: Vec<Vec<String>>) -> Result<Vec<Vec<String>>> {
    Ok(sentences
        .par_iter()
        .map(|tokens| model.predict(task, tokens))
        .collect::<seqtag::Result<Vec<_>>>()?)
}

fn cmd_tag(a: TagArgs) -> Result<ExitCode> {
    let model = Model::load(&a.checkpoint)?;
    let task = match &a.task {
        Some(name) => model.task_id(name)?,
        None if model.num_tasks() == 1 => 0,
        None => {
            let names: Vec<&str> = model.tasks().iter().map(|t| t.name.as_str()).collect();
            return Err(usage(format!("--task is required; known tasks: {}", names.join(", "))));
        }
    };
    let file = File::open(&a.input).with_context(|| format!("cannot open {}", a.input.display()))?;
    let sentences = read_tokens(BufReader::new(file), &a.input)?;
    let tags = tag_sentences(&model, task, sentences.clone())?;
    let mut out = output(a.output.as_deref())?;
    for (tokens, tags) in sentences.iter().zip(&tags) {
        for (tok, tag) in tokens.iter().zip(tags) {
            writeln!(out, "{tok}\t{tag}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn check_aligned(pred: &[LabeledSentence], gold: &[LabeledSentence]) -> Result<()> {
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.tokens != g.tokens {
            return Err(usage(format!(
                "sentence {i} differs between prediction and gold ({} vs {} tokens, starting '{}' vs '{}')",
                p.len(),
                g.len(),
                p.tokens.first().map_or("", String::as_str),
                g.tokens.first().map_or("", String::as_str)
            )));
        }
    }
    if pred.len() != gold.len() {
        return Err(usage(format!(
            "sentence {} is missing: prediction has {} sentences, gold has {}",
            pred.len().min(gold.len()),
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

fn print_counts(out: &mut dyn Write, label: &str, counts: &MatchCounts) -> io::Result<()> {
    let row = |out: &mut dyn Write, name: &str, s: seqtag::eval::ScoreTriple| {
        writeln!(
            out,
            "{label:<12}{name:<16}P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {})",
            s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
        )
    };
    for (ty, s) in counts.scores_by_type() {
        row(out, &ty, s)?;
    }
    row(out, "overall", counts.score())?;
    writeln!(out, "{label:<12}{:<16}F1 {:.4}", "macro", counts.macro_f1())
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let pred = parse_conll(&a.pred)?;
    let gold = parse_conll(&a.gold)?;
    check_aligned(&pred, &gold)?;
    let pred: Vec<Vec<SpanAnnotation>> = pred.iter().map(LabeledSentence::spans).collect();
    let gold: Vec<Vec<SpanAnnotation>> = gold.iter().map(LabeledSentence::spans).collect();
    let mut out = output(None)?;
    print_counts(&mut out, "exact", &exact_match_counts(&pred, &gold)?)?;
    if let Some(path) = &a.alternatives {
        let alts = parse_alternatives(path)?;
        let set = AlternativeSet::with_alternatives(&gold, &alts)?;
        print_counts(&mut out, "alternative", &alternative_match_counts(&pred, &set)?)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if a.hidden == 0 || a.hidden > MAX_HIDDEN {
        return Err(usage(format!("--hidden must be in 1..={MAX_HIDDEN}")));
    }
    let opts = GradcheckOptions {
        seeds: a.seeds,
        base_seed: a.seed,
        hidden: a.hidden,
        max_words: a.max_words,
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        sabotage: a.sabotage,
        modes: if a.modes.is_empty() { ShareMode::ALL.to_vec() } else { a.modes },
    };
    let report = run_gradcheck(&opts)?;
    let mut out = output(None)?;
    for r in &report.results {
        let verdict = if r.max_rel_error < report.tolerance { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<7} {:<28} {:>6} params  max rel err {:.3e}  {verdict}",
            r.mode, r.block, r.num_params, r.max_rel_error
        )?;
    }
    let passed = report.passed();
    writeln!(
        out,
        "{}: max relative error {:.3e} (tolerance {:.0e})",
        if passed { "passed" } else { "FAILED" },
        report.max_rel_error(),
        report.tolerance
    )?;
    out.flush()?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_convert(a: ConvertArgs) -> Result<ExitCode> {
    let file = File::open(&a.input).with_context(|| format!("cannot open {}", a.input.display()))?;
    let sentences = read_conll(BufReader::new(file), &a.input)?;
    let mut out = output(a.output.as_deref())?;
    for s in &sentences {
        let tags = match a.to {
            Scheme::Iob => iobes_to_iob(&s.tags),
            Scheme::Iobes => iob_to_iobes(&s.tags),
        };
        for (tok, tag) in s.tokens.iter().zip(&tags) {
            writeln!(out, "{tok}\t{tag}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

