//! Command-line front end: `synth`, `train`, `eval`, `report` and `gradcheck`.
//!
//! Every subcommand reads the same flat `key = value` config. Flags override
//! the file, the file overrides the defaults. Exit codes: 0 success, 2 usage
//! or configuration error, 1 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{self, Entry};
use crate::dataio::{self, PainClass, SplitTag, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GRADCHECK_TOL};
use crate::layers::checkpoint::load_checkpoint;
use crate::layers::{ModelKind, ModelSpec};
use crate::numerics::Activation;
use crate::report::{classification_metrics, confusion_matrix, emit_reports, read_confusion, FoldSummary, RunReport};
use crate::synthgen::{self, SynthConfig, SYNTH_KEYS};
use crate::trainer::{self, average_histories, predict_examples, EpochRecord, TrainConfig};

/// The full set of settings one invocation runs with.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub cell_activation: Activation,
    pub window: usize,
    pub overlap: f64,
    pub standardize: bool,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for CliConfig {
    fn default() -> Self {
        let standard = ModelSpec::standard(ModelKind::BiLstm);
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            layer_widths: standard.layer_widths,
            dropout_rate: standard.dropout_rate,
            cell_activation: standard.cell_activation,
            window: WINDOW_LEN,
            overlap: dataio::DEFAULT_OVERLAP,
            standardize: false,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
        }
    }
}

/// Keys outside the synthesis group, with descriptions.
pub const OTHER_KEYS: &[(&str, &str)] = &[
    ("window", "window length in samples"),
    ("overlap", "fractional overlap of consecutive windows, in [0, 1)"),
    ("standardize", "z-score each channel of each recording before windowing"),
    ("layer_widths", "comma-separated hidden widths of the two stacked layers"),
    ("dropout_rate", "dropout after each hidden layer during training"),
    ("cell_activation", "LSTM candidate and cell activation (relu, tanh, sigmoid, linear)"),
    ("max_epochs", "maximum training epochs per fold"),
    ("patience", "epochs without validation-loss decrease before stopping"),
    ("batch_size", "minibatch size"),
    ("n_folds", "cross-validation folds over the training portion"),
    ("train_fraction", "share of windows (by whole trial) used for training and validation"),
    ("learning_rate", "Adam step size"),
    ("jobs", "worker threads for fold training"),
    ("data", "dataset directory or manifest path"),
    ("out", "output directory"),
];

impl CliConfig {
    /// All keys in documentation order.
    pub fn keys() -> Vec<(&'static str, &'static str)> {
        SYNTH_KEYS.iter().chain(OTHER_KEYS).copied().collect()
    }

    /// Sets one key. `seed` applies to both synthesis and training.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "seed" => {
                self.synth.set(key, raw)?;
                self.train.seed = self.synth.seed;
            }
            "window" => self.window = config::value(key, raw)?,
            "overlap" => self.overlap = config::value(key, raw)?,
            "standardize" => self.standardize = config::bool_value(key, raw)?,
            "layer_widths" => self.layer_widths = config::list_value(key, raw)?,
            "dropout_rate" => self.dropout_rate = config::value(key, raw)?,
            "cell_activation" => self.cell_activation = raw.trim().parse()?,
            "max_epochs" => self.train.max_epochs = config::value(key, raw)?,
            "patience" => self.train.patience = config::value(key, raw)?,
            "batch_size" => self.train.batch_size = config::value(key, raw)?,
            "n_folds" => self.train.n_folds = config::value(key, raw)?,
            "train_fraction" => self.train.train_fraction = config::value(key, raw)?,
            "learning_rate" => self.train.learning_rate = config::value(key, raw)?,
            "jobs" => self.train.jobs = config::value(key, raw)?,
            "data" => self.data = PathBuf::from(raw.trim()),
            "out" => self.out = PathBuf::from(raw.trim()),
            _ if SYNTH_KEYS.iter().any(|(k, _)| *k == key) => self.synth.set(key, raw)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "window" => self.window.to_string(),
            "overlap" => self.overlap.to_string(),
            "standardize" => self.standardize.to_string(),
            "layer_widths" => self.layer_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "dropout_rate" => self.dropout_rate.to_string(),
            "cell_activation" => self.cell_activation.name().to_string(),
            "max_epochs" => self.train.max_epochs.to_string(),
            "patience" => self.train.patience.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "n_folds" => self.train.n_folds.to_string(),
            "train_fraction" => self.train.train_fraction.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "jobs" => self.train.jobs.to_string(),
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            _ => return self.synth.get(key),
        };
        Some(v)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = Self::default();
        for e in entries {
            cfg.set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("line {}: {}", e.line, strip_prefix(&err))))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        dataio::stride_for(self.window, self.overlap)?;
        for kind in ModelKind::ALL {
            self.spec(kind).validate()?;
        }
        Ok(())
    }

    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            layer_widths: self.layer_widths.clone(),
            dropout_rate: self.dropout_rate,
            n_classes: PainClass::COUNT,
            cell_activation: self.cell_activation,
        }
    }

    /// The effective configuration as a config file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, _) in Self::keys() {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }
}

fn strip_prefix(err: &Error) -> String {
    match err {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// `--help` epilogue listing every config key with its default.
pub fn key_help() -> String {
    let defaults = CliConfig::default();
    let width = CliConfig::keys().iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (`key = value`, `#` comments), with defaults:\n");
    for (key, doc) in CliConfig::keys() {
        let _ = writeln!(
            out,
            "  {key:<width$}  {doc} [default: {}]",
            defaults.get(key).unwrap_or_default()
        );
    }
    out
}

#[derive(Parser, Debug)]
#[command(name = "fnirs-pain", version, about = "Synthetic fNIRS pain classification with MLP, LSTM and Bi-LSTM models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for generation, splitting and training (overrides `seed`)
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (overrides `jobs`)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset and its manifest
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate one or all model kinds and score them on the test split
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest (overrides `data`)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// mlp, lstm_fwd, lstm_bwd, bilstm, a comma-separated list, or all
        #[arg(long, default_value = "all")]
        models: String,
    },
    /// Apply a checkpoint to the windows of a dataset
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file written by `train`
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset directory or manifest (overrides `data`)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Which windows to score; train and test repeat the seeded split
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
    },
    /// Re-emit results, curves and confusion tables from a training directory
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding history.csv and confusion_<model>.csv (overrides `data`)
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite
    Gradcheck {
        /// Random configurations per case
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn usage(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }

    fn runtime(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn command() -> clap::Command {
    let help = key_help();
    let mut cmd = Cli::command();
    for name in ["synth", "train", "eval", "report"] {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |c| c.after_help(h));
    }
    cmd
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn load_config(common: &Common, data: Option<&PathBuf>) -> std::result::Result<CliConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => CliConfig::from_entries(&config::parse_file(path).map_err(Failure::usage)?).map_err(Failure::usage)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string()).map_err(Failure::usage)?;
    }
    if let Some(jobs) = common.jobs {
        cfg.train.jobs = jobs;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(d) = data {
        cfg.data = d.clone();
    }
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

/// Parses `--models`: `all` or a comma-separated list of kinds, returned in
/// canonical order without duplicates.
pub fn parse_models(raw: &str) -> Result<Vec<ModelKind>> {
    if raw.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut kinds = raw.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<ModelKind>>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth { common } => {
            let cfg = load_config(&common, None)?;
            synth(&cfg).map_err(Failure::runtime)
        }
        Command::Train { common, data, models } => {
            let cfg = load_config(&common, data.as_ref())?;
            let kinds = parse_models(&models).map_err(Failure::usage)?;
            train(&cfg, &kinds).map_err(Failure::runtime)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
        } => {
            let cfg = load_config(&common, data.as_ref())?;
            eval(&cfg, &checkpoint, split).map_err(Failure::runtime)
        }
        Command::Report { common, data } => {
            let cfg = load_config(&common, data.as_ref())?;
            report(&cfg.data, &cfg.out).map_err(Failure::runtime)
        }
        Command::Gradcheck { seeds } => gradcheck(seeds),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(cfg: &CliConfig) -> Result<()> {
    let (recordings, _) = synthgen::generate_dataset(&cfg.synth)?;
    let manifest = dataio::write_dataset(&cfg.out, &recordings)?;
    write_text(&cfg.out.join("synth.cfg"), &cfg.render())?;
    println!("wrote {} recordings and {}", recordings.len(), manifest.display());
    Ok(())
}

fn load_windows(cfg: &CliConfig) -> Result<dataio::WindowSet> {
    let mut recordings = dataio::load_dataset(&dataio::resolve_manifest(&cfg.data))?;
    if cfg.standardize {
        recordings.iter_mut().for_each(dataio::standardize_channels);
    }
    let windows = dataio::segment_all(&recordings, cfg.window, cfg.overlap)?;
    dataio::split_and_fold(windows, cfg.train.train_fraction, cfg.train.n_folds, cfg.train.seed)
}

fn train(cfg: &CliConfig, kinds: &[ModelKind]) -> Result<()> {
    let ws = load_windows(cfg)?;
    log::info!(
        "{} windows: {} train, {} test, {} folds",
        ws.len(),
        ws.train_indices().len(),
        ws.test_indices().len(),
        ws.n_folds
    );
    let specs: Vec<ModelSpec> = kinds.iter().map(|&k| cfg.spec(k)).collect();
    let runs = trainer::run_cv_experiment(&specs, &ws, &cfg.train)?;
    trainer::write_training_outputs(&cfg.out, &runs)?;
    let reports: Vec<RunReport> = runs.into_iter().map(|r| r.report).collect();
    emit_reports(&reports, &cfg.out)?;
    write_text(&cfg.out.join("train.cfg"), &cfg.render())?;
    print!("{}", fs::read_to_string(cfg.out.join("results_table.csv")).map_err(|e| Error::io(&cfg.out, e))?);
    Ok(())
}

fn eval(cfg: &CliConfig, checkpoint: &Path, split: SplitChoice) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.window = model.input.steps;
    let ws = load_windows(&cfg)?;
    let idx: Vec<usize> = match split {
        SplitChoice::All => (0..ws.len()).collect(),
        SplitChoice::Train => ws.train_indices(),
        SplitChoice::Test => ws.test_indices(),
    };
    if idx.is_empty() {
        return Err(Error::Empty("window selection"));
    }
    let windows: Vec<&crate::numerics::Tensor> = idx.iter().map(|&i| &ws.windows[i]).collect();
    let truths: Vec<usize> = idx.iter().map(|&i| ws.labels[i].code()).collect();
    let preds = predict_examples(&model, &windows, cfg.train.batch_size)?;
    let cm = confusion_matrix(&preds, &truths, model.spec.n_classes)?;
    let m = classification_metrics(&cm)?;

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let kind = model.spec.kind;
    let mut rows = String::from("subject,trial,start,split,true_class,predicted_class\n");
    for (&i, &p) in idx.iter().zip(&preds) {
        let o = &ws.origins[i];
        let tag = match ws.split[i] {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        };
        let pred = PainClass::from_code(p).map(|c| c.name().to_string()).unwrap_or_else(|_| p.to_string());
        let _ = writeln!(rows, "{},{},{},{tag},{},{pred}", o.subject_id, o.trial_id, o.start, ws.labels[i]);
    }
    write_text(&cfg.out.join(format!("eval_predictions_{kind}.csv")), &rows)?;
    write_text(&cfg.out.join(format!("eval_confusion_{kind}.csv")), &crate::report::confusion_table(&cm))?;
    println!(
        "{kind}: {} windows, accuracy {:.2}%, sensitivity {:.2}%, specificity {:.2}%",
        idx.len(),
        m.accuracy,
        m.sensitivity,
        m.specificity
    );
    Ok(())
}

/// Rebuilds one report per model from `history.csv` and the confusion
/// tables. The selected fold is the one with the highest best validation
/// accuracy, earliest fold on ties, as in training.
pub fn reports_from_dir(dir: &Path) -> Result<Vec<RunReport>> {
    let mut by_kind: BTreeMap<ModelKind, Vec<(usize, Vec<EpochRecord>)>> = BTreeMap::new();
    for (name, fold, hist) in trainer::read_history(&dir.join("history.csv"))? {
        by_kind.entry(name.parse()?).or_default().push((fold, hist));
    }
    if by_kind.is_empty() {
        return Err(Error::Empty("history"));
    }
    let mut reports = Vec::new();
    for (kind, mut folds) in by_kind {
        folds.sort_by_key(|(f, _)| *f);
        let summaries: Vec<FoldSummary> = folds
            .iter()
            .map(|(fold, h)| {
                let best = h.iter().fold(&h[0], |b, r| if r.val_acc > b.val_acc { r } else { b });
                FoldSummary {
                    fold: *fold,
                    stopped_epoch: h.len(),
                    best_epoch: best.epoch,
                    best_val_acc: best.val_acc,
                }
            })
            .collect();
        let best_fold = summaries
            .iter()
            .fold(&summaries[0], |b, s| if s.best_val_acc > b.best_val_acc { s } else { b })
            .fold;
        let confusion = read_confusion(&dir.join(format!("confusion_{kind}.csv")))?;
        let histories: Vec<Vec<EpochRecord>> = folds.into_iter().map(|(_, h)| h).collect();
        reports.push(RunReport {
            kind,
            metrics: classification_metrics(&confusion)?,
            test_windows: confusion.total() as usize,
            confusion,
            history: average_histories(&histories),
            folds: summaries,
            best_fold,
        });
    }
    Ok(reports)
}

fn report(data: &Path, out: &Path) -> Result<()> {
    let reports = reports_from_dir(data)?;
    for p in emit_reports(&reports, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn gradcheck(seeds: usize) -> std::result::Result<(), Failure> {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let results = run_gradcheck(seeds).map_err(Failure::runtime)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<width$}  max rel error {:.3e}  ({} seeds)  {verdict}", r.name, r.max_rel_error, r.seeds);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} case(s) exceed {GRADCHECK_TOL:e}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let d = CliConfig::default();
        for (key, _) in CliConfig::keys() {
            let v = d.get(key).unwrap_or_else(|| panic!("no value for {key}"));
            let mut c = CliConfig::default();
            c.set(key, &v).unwrap();
            assert_eq!(c, d, "{key}");
        }
        let parsed = CliConfig::from_entries(&config::parse(&d.render()).unwrap()).unwrap();
        assert_eq!(parsed, d);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let entries = config::parse("n_subjects = 4\nbogus = 1\n").unwrap();
        let err = CliConfig::from_entries(&entries).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn seed_reaches_both_stages() {
        let mut c = CliConfig::default();
        c.set("seed", "99").unwrap();
        assert_eq!((c.synth.seed, c.train.seed), (99, 99));
    }

    #[test]
    fn help_lists_every_key() {
        let h = key_help();
        for (key, _) in CliConfig::keys() {
            assert!(h.contains(&format!("  {key} ")), "{key}");
        }
        assert!(h.contains("[default: 300]"));
    }

    #[test]
    fn model_lists() {
        assert_eq!(parse_models("all").unwrap(), ModelKind::ALL.to_vec());
        assert_eq!(
            parse_models("bilstm, mlp,mlp").unwrap(),
            vec![ModelKind::Mlp, ModelKind::BiLstm]
        );
        assert!(parse_models("cnn").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cli(["fnirs-pain"]), 2);
        assert_eq!(run_cli(["fnirs-pain", "fly"]), 2);
        assert_eq!(run_cli(["fnirs-pain", "train", "--models", "cnn"]), 2);
        assert_eq!(run_cli(["fnirs-pain", "synth", "--config", "/nonexistent/x.cfg"]), 2);
        assert_eq!(run_cli(["fnirs-pain", "synth", "--help"]), 0);
    }
}
