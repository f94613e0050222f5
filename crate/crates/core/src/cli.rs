//! `gcclust` command-line front end.
//!
//! ```text
//! gcclust [--config cfg.json] [--out dir] [--seed N] gen
//! gcclust [--config cfg.json] [--out dir] [--seed N] train [--epochs E]
//! gcclust [--config cfg.json] [--out dir] eval [--checkpoint model.json] [--graph-out edges.txt]
//! gcclust [--config cfg.json] [--out dir] ablate
//! ```
//!
//! Exit codes: 0 ok, 1 other failure, 2 config error, 3 I/O error,
//! 4 numerical failure, 5 dataset without labels.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_mixture, load_dataset, save_dataset, Dataset, MixtureSpec};
use crate::error::{self, Error};
use crate::graph::{build_knn_graph, EmbeddingStore};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointFormat, EncoderParams};
use crate::trainer::{embed, evaluate, train_with, EpochLog, PositiveSource, RunConfig, EVAL_TOPK};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_NO_LABELS: i32 = 5;

pub const DATA_FILE: &str = "data.csv";
pub const MODEL_FILE: &str = "model.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESOLVED_FILE: &str = "config_resolved.json";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_MD: &str = "ablation.md";

#[derive(Debug, Parser)]
#[command(
    name = "gcclust",
    version,
    about = "Graph contrastive clustering experiments"
)]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `run.seed`, and `mixture.seed` for `gen`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a Gaussian mixture dataset to `<out>/data.csv`.
    Gen,
    /// Train on `data_in` and write logs, checkpoints and metrics.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the KNN graph of the checkpoint's embeddings.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Loss ablation grid over several seeds.
    Ablate,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Contents of `--config`. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub data_in: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
    /// Mixture sampled by `gen`.
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    /// Checkpoint scored by `eval`; defaults to `<out_dir>/model.json`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Write `ckpt_{epoch}.json` every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_seeds")]
    pub ablation_seeds: Vec<u64>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            data_in: None,
            out_dir: None,
            run: RunConfig::default(),
            mixture: None,
            checkpoint: None,
            checkpoint_every: 0,
            ablation_seeds: default_seeds(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> error::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// A failed command: exit code plus message for stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Parse { .. } | Error::DimMismatch { .. } => EXIT_IO,
            Error::Json { source, .. } if source.is_io() => EXIT_IO,
            Error::Json { .. } | Error::InvalidSpec(_) | Error::InvalidK { .. } => EXIT_CONFIG,
            Error::NonFinite { .. } | Error::ZeroVector => EXIT_NUMERIC,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses arguments, runs the command, prints to stdout/stderr and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs a parsed command and returns its stdout text.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
        if let (Command::Gen, Some(m)) = (&cli.command, config.mixture.as_mut()) {
            m.seed = seed;
        }
    }
    match &cli.command {
        Command::Gen => cmd_gen(&config),
        Command::Train { epochs } => {
            if let Some(e) = epochs {
                config.run.epochs = *e;
            }
            cmd_train(&config)
        }
        Command::Eval {
            checkpoint,
            graph_out,
        } => {
            if let Some(c) = checkpoint {
                config.checkpoint = Some(c.clone());
            }
            cmd_eval(&config, graph_out.as_deref())
        }
        Command::Ablate => cmd_ablate(&config),
    }
}

fn out_dir(config: &CliConfig) -> CliResult<&Path> {
    let dir = config
        .out_dir
        .as_deref()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| {
            CliError::config("out_dir: required (set it in the config or pass --out)")
        })?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn dataset(config: &CliConfig) -> CliResult<Dataset> {
    let path = config
        .data_in
        .as_deref()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| CliError::config("data_in: required"))?;
    Ok(load_dataset(path)?)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn to_json<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn cmd_gen(config: &CliConfig) -> CliResult<String> {
    let spec = config
        .mixture
        .as_ref()
        .ok_or_else(|| CliError::config("mixture: required for gen"))?;
    spec.validate()?;
    let ds = generate_mixture(spec)?;
    let path = out_dir(config)?.join(DATA_FILE);
    save_dataset(&ds, &path)?;
    Ok(format!(
        "wrote {}: N={} d={} K={}\n",
        path.display(),
        ds.len(),
        ds.dim(),
        spec.means.len()
    ))
}

pub fn cmd_train(config: &CliConfig) -> CliResult<String> {
    config.run.validate()?;
    let ds = dataset(config)?;
    let dir = out_dir(config)?;
    write(&dir.join(RESOLVED_FILE), &to_json(config))?;

    let mut log = String::from(EpochLog::CSV_HEADER);
    log.push('\n');
    let log_path = dir.join(LOG_FILE);
    let every = config.checkpoint_every;
    let outcome = train_with::<f64, _>(&ds, &config.run, |state, entry| {
        log.push_str(&entry.csv_row());
        log.push('\n');
        if every > 0 && entry.epoch % every == 0 {
            let path = dir.join(format!("ckpt_{}.json", entry.epoch));
            save_checkpoint(&state.params, &path, CheckpointFormat::Json)?;
        }
        Ok(())
    });
    // Keep the partial log when training fails.
    write(&log_path, &log)?;
    let outcome = outcome.map_err(|e| match e {
        Error::NonFinite { epoch } => {
            CliError::new(EXIT_NUMERIC, format!("non-finite loss at epoch {epoch}"))
        }
        e => e.into(),
    })?;

    save_checkpoint(
        &outcome.params,
        &dir.join(MODEL_FILE),
        CheckpointFormat::Json,
    )?;
    write(&dir.join(METRICS_FILE), &to_json(&outcome.metrics))?;

    let mut summary = format!(
        "trained {} epochs on {} samples\n",
        config.run.epochs,
        ds.len()
    );
    if let Some(m) = &outcome.metrics {
        let _ = writeln!(
            summary,
            "acc={:.4} nmi={:.4} ari={:.4}",
            m.acc, m.nmi, m.ari
        );
    }
    Ok(summary)
}

pub fn cmd_eval(config: &CliConfig, graph_out: Option<&Path>) -> CliResult<String> {
    let ds = dataset(config)?;
    let truth = ds.labels.as_ref().ok_or_else(|| {
        CliError::new(EXIT_NO_LABELS, format!("dataset {} has no labels", ds.name))
    })?;
    let dir = out_dir(config)?;
    let ckpt = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| dir.join(MODEL_FILE));
    let params: EncoderParams<f64> = load_checkpoint(&ckpt, CheckpointFormat::from_path(&ckpt))?;
    if params.input_dim() != ds.dim() {
        return Err(CliError::config(format!(
            "checkpoint expects {} input features, dataset has {}",
            params.input_dim(),
            ds.dim()
        )));
    }
    let embedding = embed(&params, &ds.x)?;
    let report = evaluate(&embedding, truth, &EVAL_TOPK)?;
    let table = format!("{}\n{}\n", report.csv_header(), report.csv_record());
    write(&dir.join(EVAL_FILE), &table)?;

    if let Some(path) = graph_out {
        let store = EmbeddingStore::new(embedding.z, 1.0)?;
        let graph = build_knn_graph(&store, config.run.k)?;
        let mut buf = Vec::new();
        graph
            .write_edge_list(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(table)
}

/// One row of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub rgc: PositiveSource,
    pub agc: PositiveSource,
    pub cr: bool,
    pub accs: Vec<f64>,
}

impl AblationRow {
    pub fn mean_acc(&self) -> f64 {
        self.accs.iter().sum::<f64>() / self.accs.len().max(1) as f64
    }
}

/// `(name, rgc positives, agc positives, cr on)` for every ablation row.
pub fn ablation_grid() -> [(&'static str, PositiveSource, PositiveSource, bool); 5] {
    use PositiveSource::{Graph, SelfAugment};
    [
        ("full", Graph, Graph, true),
        ("rgc_only_graph", Graph, SelfAugment, true),
        ("agc_only_graph", SelfAugment, Graph, true),
        ("no_graph", SelfAugment, SelfAugment, true),
        ("no_cr", Graph, Graph, false),
    ]
}

pub fn run_ablation(
    ds: &Dataset,
    base: &RunConfig,
    seeds: &[u64],
) -> crate::Result<Vec<AblationRow>> {
    if ds.labels.is_none() {
        return Err(Error::InvalidSpec(
            "ablation needs a labeled dataset".into(),
        ));
    }
    let mut rows = Vec::new();
    for (name, rgc, agc, cr) in ablation_grid() {
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = RunConfig {
                seed,
                rgc_positives: rgc,
                agc_positives: agc,
                eta: if cr { base.eta } else { 0.0 },
                metric_stride: base.epochs.max(1),
                ..base.clone()
            };
            let outcome = train_with::<f64, _>(ds, &run, |_, _| Ok(()))?;
            accs.push(outcome.metrics.map_or(f64::NAN, |m| m.acc));
        }
        rows.push(AblationRow {
            variant: name.to_string(),
            rgc,
            agc,
            cr,
            accs,
        });
    }
    Ok(rows)
}

fn source_name(s: PositiveSource) -> &'static str {
    match s {
        PositiveSource::Graph => "graph",
        PositiveSource::SelfAugment => "self",
    }
}

pub fn ablation_csv(rows: &[AblationRow], seeds: &[u64]) -> String {
    let mut out = String::from("variant,rgc,agc,cr,mean_acc");
    for s in seeds {
        let _ = write!(out, ",acc_seed{s}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{:?}",
            r.variant,
            source_name(r.rgc),
            source_name(r.agc),
            if r.cr { "on" } else { "off" },
            r.mean_acc()
        );
        for a in &r.accs {
            let _ = write!(out, ",{a:?}");
        }
        out.push('\n');
    }
    out
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | RGC | AGC | CR | mean ACC |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.4} |",
            r.variant,
            source_name(r.rgc),
            source_name(r.agc),
            if r.cr { "on" } else { "off" },
            r.mean_acc()
        );
    }
    out
}

pub fn cmd_ablate(config: &CliConfig) -> CliResult<String> {
    config.run.validate()?;
    if config.ablation_seeds.is_empty() {
        return Err(CliError::config("ablation_seeds: must not be empty"));
    }
    let ds = dataset(config)?;
    if ds.labels.is_none() {
        return Err(CliError::new(
            EXIT_NO_LABELS,
            format!("dataset {} has no labels", ds.name),
        ));
    }
    let dir = out_dir(config)?;
    write(&dir.join(RESOLVED_FILE), &to_json(config))?;
    let rows = run_ablation(&ds, &config.run, &config.ablation_seeds)?;
    write(
        &dir.join(ABLATION_CSV),
        &ablation_csv(&rows, &config.ablation_seeds),
    )?;
    let md = ablation_markdown(&rows);
    write(&dir.join(ABLATION_MD), &md)?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(config: Option<&Path>, out: &Path, command: Command) -> Cli {
        Cli {
            config: config.map(Path::to_path_buf),
            out: Some(out.to_path_buf()),
            seed: None,
            command,
        }
    }

    fn write_config(dir: &Path, value: serde_json::Value) -> PathBuf {
        let path = dir.join("config.json");
        fs::write(&path, value.to_string()).unwrap();
        path
    }

    fn mixture_json() -> serde_json::Value {
        serde_json::json!({
            "means": [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]],
            "stddevs": [1.0, 1.0, 1.0],
            "counts": [10, 20, 30],
            "seed": 1
        })
    }

    #[test]
    fn gen_writes_all_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), serde_json::json!({ "mixture": mixture_json() }));
        let summary = execute(&cli(Some(&cfg), tmp.path(), Command::Gen)).unwrap();
        assert!(summary.contains("N=60"));
        let ds = load_dataset(&tmp.path().join(DATA_FILE)).unwrap();
        assert_eq!(ds.len(), 60);
    }

    #[test]
    fn gen_missing_config_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let missing = tmp.path().join("nope.json");
        let err = execute(&cli(Some(&missing), tmp.path(), Command::Gen)).unwrap_err();
        assert_eq!(err.code, EXIT_IO);
        assert!(err.message.contains("nope.json"));
    }

    #[test]
    fn gen_negative_stddev_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = mixture_json();
        m["stddevs"] = serde_json::json!([1.0, -1.0, 1.0]);
        let cfg = write_config(tmp.path(), serde_json::json!({ "mixture": m }));
        let err = execute(&cli(Some(&cfg), tmp.path(), Command::Gen)).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert!(err.message.contains("stddevs"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), serde_json::json!({ "run": { "tau": 0.1 } }));
        let err = execute(&cli(Some(&cfg), tmp.path(), Command::Gen)).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    fn small_train_config(tmp: &Path, epochs: usize, labeled: bool) -> PathBuf {
        let mut ds = generate_mixture(&MixtureSpec::ring(3, 2, 15, 1.0, 6.0, 0)).unwrap();
        if !labeled {
            ds.labels = None;
        }
        let data = tmp.join("train.csv");
        save_dataset(&ds, &data).unwrap();
        write_config(
            tmp,
            serde_json::json!({
                "data_in": data,
                "checkpoint_every": 1,
                "run": {
                    "epochs": epochs,
                    "batch_size": 16,
                    "k": 3,
                    "encoder": { "hidden": [8], "rep_dim": 4, "clusters": 3 }
                }
            }),
        )
    }

    #[test]
    fn train_zero_epochs_writes_init_metrics() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_train_config(tmp.path(), 5, true);
        let out = tmp.path().join("run");
        execute(&cli(Some(&cfg), &out, Command::Train { epochs: Some(0) })).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(METRICS_FILE)).unwrap()).unwrap();
        assert!(metrics["acc"].as_f64().is_some());
        let log = fs::read_to_string(out.join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 1);
    }

    #[test]
    fn train_then_eval_matches_final_log() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_train_config(tmp.path(), 2, true);
        let out = tmp.path().join("run");
        execute(&cli(Some(&cfg), &out, Command::Train { epochs: None })).unwrap();
        assert!(out.join("ckpt_1.json").exists() && out.join("ckpt_2.json").exists());

        let table = execute(&cli(
            Some(&cfg),
            &out,
            Command::Eval {
                checkpoint: None,
                graph_out: Some(out.join("edges.txt")),
            },
        ))
        .unwrap();
        let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
        assert_eq!(&header[3..], &["top1nn", "top5nn", "top10nn", "top20nn"]);
        let values: Vec<f64> = table
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();

        let log = fs::read_to_string(out.join(LOG_FILE)).unwrap();
        let last: Vec<&str> = log.lines().last().unwrap().split(',').collect();
        let logged = |i: usize| last[i].parse::<f64>().unwrap();
        assert!((values[0] - logged(6)).abs() <= 1e-12);
        assert!((values[1] - logged(7)).abs() <= 1e-12);
        assert!((values[2] - logged(8)).abs() <= 1e-12);
        assert!((values[4] - logged(9)).abs() <= 1e-12);
        assert!(out.join("edges.txt").exists());
    }

    #[test]
    fn resolved_config_reproduces_run() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_train_config(tmp.path(), 2, true);
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        execute(&cli(Some(&cfg), &a, Command::Train { epochs: None })).unwrap();
        let resolved = a.join(RESOLVED_FILE);
        execute(&cli(Some(&resolved), &b, Command::Train { epochs: None })).unwrap();
        assert_eq!(
            fs::read(a.join(LOG_FILE)).unwrap(),
            fs::read(b.join(LOG_FILE)).unwrap()
        );
    }

    #[test]
    fn eval_unlabeled_exits_5() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_train_config(tmp.path(), 1, false);
        let out = tmp.path().join("run");
        execute(&cli(Some(&cfg), &out, Command::Train { epochs: None })).unwrap();
        let err = execute(&cli(
            Some(&cfg),
            &out,
            Command::Eval {
                checkpoint: None,
                graph_out: None,
            },
        ))
        .unwrap_err();
        assert_eq!(err.code, EXIT_NO_LABELS);
    }

    #[test]
    fn nan_loss_exits_4() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_train_config(tmp.path(), 3, true);
        let mut config = CliConfig::load(&cfg).unwrap();
        config.run.lr0 = 1e300;
        config.out_dir = Some(tmp.path().join("run"));
        let err = cmd_train(&config).unwrap_err();
        assert_eq!(err.code, EXIT_NUMERIC);
        assert!(err.message.contains("epoch 1"));
    }

    #[test]
    fn ablation_has_five_reproducible_rows() {
        let ds = generate_mixture(&MixtureSpec::ring(3, 2, 10, 1.0, 6.0, 0)).unwrap();
        let run = RunConfig {
            epochs: 1,
            batch_size: 10,
            k: 3,
            encoder: crate::trainer::EncoderConfig {
                hidden: vec![8],
                rep_dim: 4,
                clusters: 3,
            },
            ..RunConfig::default()
        };
        let a = run_ablation(&ds, &run, &[0, 1]).unwrap();
        let b = run_ablation(&ds, &run, &[0, 1]).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        let csv = ablation_csv(&a, &[0, 1]);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("variant,rgc,agc,cr,mean_acc,acc_seed0,acc_seed1\n"));
    }

    #[test]
    fn parse_global_flags() {
        let cli = Cli::try_parse_from([
            "gcclust", "train", "--epochs", "3", "--seed", "9", "--out", "x",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(9));
        assert!(matches!(cli.command, Command::Train { epochs: Some(3) }));
    }
}
