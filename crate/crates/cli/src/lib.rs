//! Command implementations behind the `drugtag` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use drugtag::corpus::{
    self, corpus_stats, load_column_corpus, load_raw_text, write_column_corpus, Corpus, Sentence,
};
use drugtag::models::Architecture;
use drugtag::training::{
    random_search, random_search_with_validation, split_train_validation, train,
    train_with_validation, Checkpoint, HyperParams, SearchConfig, DEFAULT_MAX_EPOCHS,
    TRAIN_FRACTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<drugtag::Error> for CliError {
    fn from(e: drugtag::Error) -> Self {
        let kind = if e.is_numeric() {
            ErrorKind::Numeric
        } else {
            ErrorKind::Data
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Attaches the offending path to I/O and parse errors.
fn at(path: &Path) -> impl Fn(drugtag::Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        if !err.message.contains(&path.display().to_string()) {
            err.message = format!("{}: {}", path.display(), err.message);
        }
        err
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "drugtag",
    version,
    about = "Drug name recognition with recurrent taggers"
)]
pub struct Cli {
    /// Log progress (repeat for debug output)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert DDI XML directories into a two-column IOB corpus
    Convert(ConvertArgs),
    /// Split a corpus into training and validation parts
    Split(SplitArgs),
    /// Train one model with early stopping on a validation split
    Train(TrainArgs),
    /// Random hyperparameter search
    Search(SearchArgs),
    /// Score a model on a tagged corpus
    Eval(EvalArgs),
    /// Tag a corpus with a trained model
    Predict(PredictArgs),
    /// Print sentence and entity counts of a corpus
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// token<TAB>tag lines, blank line between sentences
    Column,
    /// one sentence of running text per line
    Raw,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directories (or single files) of DDI XML; all are merged in order
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the statistics as JSON
    #[arg(long)]
    pub stats_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long, default_value_t = TRAIN_FRACTION)]
    pub ratio: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Hidden units per layer (direction, for the BiLSTM)
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    /// Context window size (odd)
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    #[arg(long, default_value_t = 100)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    /// Probability of dropping a unit
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    /// Rescale sentence gradients whose L2 norm exceeds this value
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Accept values outside the standard search sets and ranges
    #[arg(long)]
    pub unrestricted: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    #[arg(short, long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Checkpoint path
    #[arg(short, long)]
    pub out: PathBuf,
    /// Per-epoch record as JSON; defaults to <out>.record.json
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Use this corpus for validation instead of a 70/30 split
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    pub corpus: PathBuf,
    #[arg(short, long, value_parser = parse_arch)]
    pub arch: Architecture,
    /// Best checkpoint path
    #[arg(short, long)]
    pub out: PathBuf,
    /// Trial log as JSON; defaults to <out>.trials.json
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trials run in parallel; 0 uses every core
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Column)]
    pub format: InputFormat,
    /// JSON report path; defaults to <corpus>.eval.json
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Restrict CRF decoding to well-formed IOB sequences
    #[arg(long)]
    pub constrained: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Column)]
    pub format: InputFormat,
    #[arg(long)]
    pub constrained: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Column)]
    pub format: InputFormat,
    /// Print JSON instead of the table
    #[arg(long)]
    pub json: bool,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: drugtag::Error| e.to_string())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Convert(a) => cmd_convert(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Search(a) => cmd_search(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Stats(a) => cmd_stats(&a),
    }
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write leaves nothing behind.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> drugtag::Result<()>,
) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::data(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(at(path))?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| drugtag::Error::Io(e.into()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// The given seed, or a fresh one that is announced so the run can be
/// repeated.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        let chosen =
            (nanos as u64 ^ (nanos >> 64) as u64 ^ u64::from(std::process::id()).rotate_left(32))
                >> 1;
        eprintln!("using seed {chosen} (pass --seed {chosen} to reproduce)");
        chosen
    })
}

pub fn load_corpus(path: &Path, format: InputFormat) -> CliResult<Corpus> {
    if !path.is_file() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    match format {
        InputFormat::Column => load_column_corpus(path),
        InputFormat::Raw => load_raw_text(path),
    }
    .map_err(at(path))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    Checkpoint::load(path).map_err(at(path))
}

pub fn cmd_convert(args: &ConvertArgs) -> CliResult {
    let mut merged: Option<Corpus> = None;
    for input in &args.inputs {
        if !input.exists() {
            return Err(CliError::data(format!(
                "{}: no such file or directory",
                input.display()
            )));
        }
        let conv = if input.is_dir() {
            corpus::convert_ddi_dir(input)
        } else {
            corpus::convert_ddi_xml(input)
        }
        .map_err(at(input))?;
        if conv.corpus.is_empty() {
            log::warn!("{}: no sentences found", input.display());
        }
        log::info!(
            "{}: {} sentences, {} warnings",
            input.display(),
            conv.corpus.len(),
            conv.warnings.len()
        );
        merged = Some(match merged {
            None => conv.corpus,
            Some(m) => m.merge(conv.corpus),
        });
    }
    let mut corpus = merged.unwrap_or_default();
    corpus.provenance = args.out.display().to_string();
    write_atomic(&args.out, |w| write_column_corpus(&corpus, w))?;
    let stats = corpus_stats(&corpus);
    print!("{}", stats.render_table());
    if let Some(p) = &args.stats_json {
        write_json(p, &serde_json::to_value(&stats).expect("stats serialize"))?;
    }
    Ok(())
}

pub fn cmd_split(args: &SplitArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus, InputFormat::Column)?;
    let seed = resolve_seed(args.seed);
    let (train_set, validation) = split_train_validation(&corpus, args.ratio, seed)?;
    write_atomic(&args.train, |w| write_column_corpus(&train_set, w))?;
    write_atomic(&args.validation, |w| write_column_corpus(&validation, w))?;
    println!(
        "{} training / {} validation sentences",
        train_set.len(),
        validation.len()
    );
    Ok(())
}

/// Turns the hyperparameter flags into validated [`HyperParams`].
pub fn hyperparams(args: &HyperArgs, seed: u64) -> CliResult<HyperParams> {
    let hp = HyperParams {
        hidden: args.hidden,
        window: args.window,
        embedding_dim: args.embedding_dim,
        learning_rate: args.learning_rate,
        dropout_rate: args.dropout,
        max_epochs: args.max_epochs,
        seed,
        clip_norm: args.clip_norm,
    };
    if args.unrestricted {
        hp.validate_structure()
    } else {
        hp.validate()
    }
    .map_err(|e| {
        let hint = if args.unrestricted || hp.validate_structure().is_err() {
            ""
        } else {
            " (pass --unrestricted to allow it)"
        };
        CliError::usage(format!("{e}{hint}"))
    })?;
    Ok(hp)
}

/// Trains, writes the checkpoint and its record, and returns the best
/// validation F1.
pub fn cmd_train(args: &TrainArgs) -> CliResult<f64> {
    let seed = resolve_seed(args.seed);
    let hp = hyperparams(&args.hyper, seed)?;
    let corpus = load_corpus(&args.corpus, InputFormat::Column)?;
    let (checkpoint, record) = match &args.validation {
        Some(v) => train_with_validation(
            args.arch,
            &corpus,
            &load_corpus(v, InputFormat::Column)?,
            &hp,
        )?,
        None => train(args.arch, &corpus, &hp)?,
    };
    write_atomic(&args.out, |w| Ok(w.write_all(&checkpoint.to_bytes())?))?;
    let record_path = args
        .record
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".record.json"));
    write_json(
        &record_path,
        &json!({
            "architecture": args.arch.id(),
            "hyperparams": hp,
            "best_epoch": record.best_epoch,
            "best_validation_f1": record.best_f1(),
            "epochs": record.epochs,
        }),
    )?;
    println!(
        "best validation F1 {:.2} at epoch {} of {}",
        record.best_f1(),
        record.best_epoch,
        record.epochs.len()
    );
    Ok(record.best_f1())
}

pub fn cmd_search(args: &SearchArgs) -> CliResult {
    if args.trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    if args.max_epochs == 0 {
        return Err(CliError::usage("--max-epochs must be at least 1"));
    }
    let seed = resolve_seed(args.seed);
    let corpus = load_corpus(&args.corpus, InputFormat::Column)?;
    let config = SearchConfig {
        trials: args.trials,
        seed,
        max_epochs: args.max_epochs,
        clip_norm: args.clip_norm,
        jobs: args.jobs,
    };
    let outcome = match &args.validation {
        Some(v) => random_search_with_validation(
            args.arch,
            &corpus,
            &load_corpus(v, InputFormat::Column)?,
            &config,
        )?,
        None => random_search(args.arch, &corpus, &config)?,
    };
    write_atomic(&args.out, |w| {
        Ok(w.write_all(&outcome.checkpoint.to_bytes())?)
    })?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".trials.json"));
    write_json(
        &log_path,
        &json!({
            "architecture": args.arch.id(),
            "seed": seed,
            "best_trial": outcome.best_trial,
            "trials": outcome.trials,
        }),
    )?;
    for t in &outcome.trials {
        let hp = &t.hyperparams;
        println!(
            "trial {:>3}  H={:<3} s={} d={:<4} lr={:.4} dropout={:.4}  F1 {:.2} (epoch {})",
            t.trial,
            hp.hidden,
            hp.window,
            hp.embedding_dim,
            hp.learning_rate,
            hp.dropout_rate,
            t.validation_f1,
            t.best_epoch
        );
    }
    println!(
        "best trial {} with validation F1 {:.2}",
        outcome.best_trial,
        outcome.best().validation_f1
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult {
    let checkpoint = load_checkpoint(&args.model)?;
    let corpus = load_corpus(&args.corpus, args.format)?;
    if !corpus.is_tagged() {
        return Err(CliError::data(format!(
            "{}: evaluation needs gold tags; supply a two-column corpus",
            args.corpus.display()
        )));
    }
    let report = checkpoint.evaluate(&corpus, args.constrained)?;
    print!("{}", report.render_table());
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.corpus, ".eval.json"));
    write_json(
        &path,
        &json!({
            "model": args.model.display().to_string(),
            "corpus": args.corpus.display().to_string(),
            "architecture": checkpoint.architecture().id(),
            "rows": report.rows(),
        }),
    )
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult {
    let checkpoint = load_checkpoint(&args.model)?;
    let corpus = load_corpus(&args.input, args.format)?;
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| {
            let tags = checkpoint.predict(&s.words, args.constrained)?;
            Sentence::tagged(s.words.clone(), tags)
        })
        .collect::<drugtag::Result<Vec<_>>>()?;
    let out = Corpus::new(args.out.display().to_string(), sentences);
    write_atomic(&args.out, |w| write_column_corpus(&out, w))?;
    log::info!("tagged {} sentences", out.len());
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> CliResult {
    let corpus = load_corpus(&args.corpus, args.format)?;
    let stats = corpus_stats(&corpus);
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&stats).expect("stats serialize")
        );
    } else {
        print!("{}", stats.render_table());
    }
    Ok(())
}
