//! Command-line entry points: `train`, `parse`, `eval` and `oracle-check`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{annotate, parse_all, score, PunctPolicy};
use crate::nn::{ModelConfig, ParserModel};
use crate::oracle::check::{self, CheckOptions, CostFn};
use crate::par::Execution;
use crate::training::{train, Exploration, OracleKind, TrainConfig};
use crate::transition::System;
use crate::treebank::{
    build_vocab, emit_conll, load_embeddings, parse_conll, parse_conll_unannotated,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dynparse",
    version,
    about = "Stack-LSTM transition parser with dynamic-oracle training"
)]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a parser and write the best checkpoint.
    Train(TrainArgs),
    /// Parse a CoNLL file with a trained model.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Verify the dynamic oracle against brute-force search.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// key=value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// arc-standard or arc-hybrid.
    #[arg(long)]
    pub system: Option<String>,
    /// static or dynamic.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gold_warmup: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pretrained vectors, word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// JSON-lines epoch reports (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// sample or one-best.
    #[arg(long)]
    pub exploration: Option<String>,
    /// Include label mistakes in dynamic-oracle costs (true/false).
    #[arg(long)]
    pub labeled_costs: Option<bool>,
    /// Forms seen fewer times map to the unknown word.
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub pos_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub state_dim: Option<usize>,
    /// Recursive composition of attached subtrees (true/false).
    #[arg(long)]
    pub composition: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output CoNLL file (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Comma-separated POS tags excluded from scoring.
    #[arg(long)]
    pub exclude_punct: Option<String>,
    /// Write the JSON score here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 5)]
    pub max_len: usize,
    /// Number of random larger trees to spot-check.
    #[arg(long, default_value_t = 0)]
    pub random: usize,
    /// Length of the random trees.
    #[arg(long = "len", default_value_t = 8)]
    pub random_len: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Alpha(_) => EXIT_USAGE,
        Error::Verification(_) | Error::OracleFailure => EXIT_VERIFY,
        _ => EXIT_DATA,
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_oracle(args, &check::oracle_costs)
}

/// As [`run`], with `oracle-check` verifying `cost_fn` instead of the production oracle.
pub fn run_with_oracle<I, T>(args: I, cost_fn: &CostFn) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, exec),
        Command::Parse(a) => cmd_parse(a, exec),
        Command::Eval(a) => cmd_eval(a),
        Command::OracleCheck(a) => cmd_oracle_check(a, exec, cost_fn),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "train",
    "dev",
    "system",
    "oracle",
    "alpha",
    "gold-warmup",
    "epochs",
    "seed",
    "embeddings",
    "model-out",
    "report",
    "learning-rate",
    "lr-decay",
    "clip-norm",
    "l2",
    "exploration",
    "labeled-costs",
    "min-count",
    "word-dim",
    "pos-dim",
    "hidden-dim",
    "state-dim",
    "composition",
];

/// Flat `key = value` file; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !TRAIN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "config line {}: unknown key `{key}`",
                i + 1
            )));
        }
        map.insert(key, value.trim().to_owned());
    }
    Ok(map)
}

fn fill<T: FromStr>(
    slot: &mut Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<()> {
    if slot.is_none() {
        if let Some(raw) = file.get(key) {
            let v = raw
                .parse()
                .map_err(|_| Error::Config(format!("config key `{key}`: invalid value `{raw}`")))?;
            *slot = Some(v);
        }
    }
    Ok(())
}

impl TrainArgs {
    /// Fill unset flags from the config file, if any.
    pub fn merge_config(&mut self) -> Result<()> {
        let Some(path) = &self.config else {
            return Ok(());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f = parse_config_file(&text)?;
        fill(&mut self.train, &f, "train")?;
        fill(&mut self.dev, &f, "dev")?;
        fill(&mut self.system, &f, "system")?;
        fill(&mut self.oracle, &f, "oracle")?;
        fill(&mut self.alpha, &f, "alpha")?;
        fill(&mut self.gold_warmup, &f, "gold-warmup")?;
        fill(&mut self.epochs, &f, "epochs")?;
        fill(&mut self.seed, &f, "seed")?;
        fill(&mut self.embeddings, &f, "embeddings")?;
        fill(&mut self.model_out, &f, "model-out")?;
        fill(&mut self.report, &f, "report")?;
        fill(&mut self.learning_rate, &f, "learning-rate")?;
        fill(&mut self.lr_decay, &f, "lr-decay")?;
        fill(&mut self.clip_norm, &f, "clip-norm")?;
        fill(&mut self.l2, &f, "l2")?;
        fill(&mut self.exploration, &f, "exploration")?;
        fill(&mut self.labeled_costs, &f, "labeled-costs")?;
        fill(&mut self.min_count, &f, "min-count")?;
        fill(&mut self.word_dim, &f, "word-dim")?;
        fill(&mut self.pos_dim, &f, "pos-dim")?;
        fill(&mut self.hidden_dim, &f, "hidden-dim")?;
        fill(&mut self.state_dim, &f, "state-dim")?;
        fill(&mut self.composition, &f, "composition")?;
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let system = self
            .system
            .as_deref()
            .map(System::from_str)
            .transpose()?
            .unwrap_or(d.system);
        let cfg = TrainConfig {
            oracle: self
                .oracle
                .as_deref()
                .map(OracleKind::from_str)
                .transpose()?
                .unwrap_or(d.oracle),
            alpha: self.alpha.unwrap_or(d.alpha),
            gold_warmup_epochs: self.gold_warmup.unwrap_or(d.gold_warmup_epochs),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            clip_norm: self.clip_norm.unwrap_or(d.clip_norm),
            l2: self.l2.unwrap_or(d.l2),
            seed: self.seed.unwrap_or(d.seed),
            system,
            exploration: self
                .exploration
                .as_deref()
                .map(Exploration::from_str)
                .transpose()?
                .unwrap_or(d.exploration),
            labeled_costs: self.labeled_costs.unwrap_or(d.labeled_costs),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            word_dim: self.word_dim.unwrap_or(d.word_dim),
            pos_dim: self.pos_dim.unwrap_or(d.pos_dim),
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            state_dim: self.state_dim.unwrap_or(d.state_dim),
            composition: self.composition.unwrap_or(d.composition),
            ..d
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// The parent directory of an output path must exist.
fn require_writable(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Where JSON-lines records go.
enum Sink {
    Stdout,
    File(PathBuf, fs::File),
}

impl Sink {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Sink::Stdout),
            Some(p) => {
                let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
                Ok(Sink::File(p.to_owned(), f))
            }
        }
    }

    fn line(&mut self, s: &str) -> Result<()> {
        match self {
            Sink::Stdout => {
                println!("{s}");
                Ok(())
            }
            Sink::File(p, f) => writeln!(f, "{s}").map_err(|e| Error::io(p.clone(), e)),
        }
    }
}

pub fn cmd_train(mut args: TrainArgs, exec: Execution) -> Result<i32> {
    args.merge_config()?;
    let cfg = args.train_config()?;
    let train_path = args
        .train
        .clone()
        .ok_or_else(|| Error::Config("--train is required".into()))?;
    let model_out = args
        .model_out
        .clone()
        .ok_or_else(|| Error::Config("--model-out is required".into()))?;
    require_file(&train_path)?;
    for p in [&args.dev, &args.embeddings].into_iter().flatten() {
        require_file(p)?;
    }
    require_writable(&model_out)?;
    if let Some(r) = &args.report {
        require_writable(r)?;
    }

    let train_set = parse_conll(&read(&train_path)?)?;
    let dev_set = match &args.dev {
        Some(p) => parse_conll(&read(p)?)?,
        None => Vec::new(),
    };
    let vocab = build_vocab(&train_set, args.min_count.unwrap_or(1))?;
    let mut model_config = args.model_config();
    let embeddings = match &args.embeddings {
        Some(p) => {
            let table = load_embeddings(p, &vocab)?;
            model_config.pretrained_dim = table.dimension();
            Some(table)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ParserModel::new(
        model_config,
        cfg.system,
        vocab,
        embeddings.as_ref(),
        &mut rng,
    )?;
    let mut sink = Sink::open(args.report.as_deref())?;
    let outcome = train(model, &train_set, &dev_set, &cfg, exec, &mut rng, |r| {
        sink.line(&r.to_json())
    })?;
    outcome.best.save(&model_out)?;
    log::info!(
        "best epoch {} written to {}",
        outcome.best_epoch,
        model_out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_parse(args: ParseArgs, exec: Execution) -> Result<i32> {
    require_file(&args.model)?;
    require_file(&args.input)?;
    if let Some(o) = &args.output {
        require_writable(o)?;
    }
    let model = ParserModel::load(&args.model)?;
    let sentences = parse_conll_unannotated(&read(&args.input)?)?;
    for (i, s) in sentences.iter().enumerate() {
        for t in &s.tokens {
            if t.label != "_" && model.vocab.label_id(&t.label).is_none() {
                return Err(Error::Mismatch(format!(
                    "sentence {}, token {}: label `{}` is not in the model's action inventory",
                    i + 1,
                    t.index,
                    t.label
                )));
            }
        }
    }
    let trees = parse_all(&model, &sentences, exec)?;
    let parsed: Vec<_> = sentences
        .iter()
        .zip(&trees)
        .map(|(s, t)| annotate(&model, s, t))
        .collect();
    let text = emit_conll(&parsed);
    match &args.output {
        Some(o) => write(o, &text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(args: EvalArgs) -> Result<i32> {
    require_file(&args.gold)?;
    require_file(&args.pred)?;
    let gold = parse_conll(&read(&args.gold)?)?;
    let pred = parse_conll(&read(&args.pred)?)?;
    let policy = args
        .exclude_punct
        .as_deref()
        .map_or(PunctPolicy::Include, PunctPolicy::exclude_tags);
    let report = score(&pred, &gold, &policy)?;
    println!("{report}");
    Sink::open(args.report.as_deref())?.line(&report.to_json())?;
    Ok(EXIT_OK)
}

pub fn cmd_oracle_check(args: OracleCheckArgs, exec: Execution, cost_fn: &CostFn) -> Result<i32> {
    if args.max_len == 0 && args.random == 0 {
        return Err(Error::Config(
            "nothing to check: --max-len 0 and --random 0".into(),
        ));
    }
    let opts = CheckOptions {
        max_len: args.max_len,
        random: args.random,
        random_len: args.random_len,
        seed: args.seed,
        exec,
    };
    let report = check::run(&opts, cost_fn);
    println!(
        "exhaustive: {} trees (n <= {}), {} configurations, {} actions, {} zero-cost states",
        report.trees,
        args.max_len,
        report.stats.configs,
        report.stats.actions,
        report.stats.zero_cost_states
    );
    if args.random > 0 {
        println!(
            "random: {} trees (n = {}), {} configurations, {} actions",
            report.random_trees,
            args.random_len,
            report.random_stats.configs,
            report.random_stats.actions
        );
    }
    match report.failure {
        None => {
            println!("PASS");
            Ok(EXIT_OK)
        }
        Some(w) => {
            println!("FAIL");
            println!("witness: {w}");
            Ok(EXIT_VERIFY)
        }
    }
}
