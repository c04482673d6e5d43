//! Command implementations behind the `hbsel` binary.
//!
//! Every command writes its CSV outputs and a `manifest.json` into the
//! output directory. Outputs other than timing columns are deterministic for a
//! given config and seed, independent of `--jobs`.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use hbsel_core::metrics::MetricReport;
use hbsel_core::ml::{self, InputMode, MlSelector, SelectorModel, TrainOptions, TrainingSet};
use hbsel_core::protocol::{episode_seed, EpisodeTrace, SeedStream, Simulator};
use hbsel_core::schedulers::{
    subset_count, AdaptiveTopK, Exhaustive, Greedy, Idle, SchedulerKind, TopK, UserSelector,
};
use hbsel_core::{ConfigError, SystemConfig};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "hbsel",
    version,
    about = "User selection for multi-user mmWave hybrid beamforming"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of episodes (test episodes, or training episodes for train/gen-dataset).
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Worker threads for episode-parallel runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scheduler over the test episodes.
    Simulate {
        #[arg(long, default_value = "greedy")]
        scheduler: String,
        /// Model file, required for the `ml` scheduler.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write per-slot logs.
        #[arg(long)]
        per_slot: bool,
    },
    /// Generate greedy-labelled training data.
    GenDataset {
        /// Input mode, e.g. `W+C(W)` (overrides the config).
        #[arg(long)]
        input_mode: Option<String>,
    },
    /// Train the learned selector.
    Train {
        /// Existing dataset; generated on the fly when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the trained model (default `<out>/model.bin`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Continue from the parameters of this model.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        input_mode: Option<String>,
    },
    /// Evaluate one or more trained models on the test episodes.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        per_slot: bool,
    },
    /// Compare schedulers on shared channel realisations.
    Compare {
        /// Comma-separated scheduler names.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "greedy,adaptive,topN,top1"
        )]
        scheduler: Vec<String>,
        /// Model files for `ml`; several give one row per model.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        per_slot: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Resolved config plus where outputs go.
pub struct RunContext {
    pub config: SystemConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub episodes: Option<usize>,
}

impl RunContext {
    pub fn from_args(args: &CommonArgs) -> CliResult<Self> {
        let mut config = match &args.config {
            Some(p) => SystemConfig::load(p)?,
            None => SystemConfig::default(),
        };
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        config.validate()?;
        if args.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.experiment.out_dir));
        Ok(Self {
            config,
            out,
            jobs: args.jobs,
            episodes: args.episodes,
        })
    }

    fn test_episodes(&self) -> usize {
        self.episodes
            .unwrap_or(self.config.experiment.test_episodes)
    }

    fn train_episodes(&self) -> usize {
        self.episodes.unwrap_or(self.config.ml.train_episodes)
    }

    fn pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("cannot start worker threads")
    }

    fn prepare_out(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create {}", self.out.display()))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = RunContext::from_args(&cli.common)?;
    match cli.command {
        Command::Simulate {
            scheduler,
            model,
            per_slot,
        } => {
            let reports = cmd_compare(
                &ctx,
                &[scheduler],
                &model.into_iter().collect::<Vec<_>>(),
                per_slot,
                "simulate",
            )?;
            print_table(&reports);
        }
        Command::GenDataset { input_mode } => {
            let ds = cmd_gen_dataset(&ctx, input_mode.as_deref())?;
            println!(
                "wrote {} samples ({} episodes x {} slots, input {})",
                ds.len(),
                ds.episodes,
                ds.steps,
                ds.mode
            );
        }
        Command::Train {
            dataset,
            model,
            resume,
            epochs,
            lr,
            input_mode,
        } => {
            let opts = TrainArgs {
                dataset,
                model,
                resume,
                epochs,
                lr,
                input_mode,
            };
            let outcome = cmd_train(&ctx, &opts)?;
            if let Some(last) = outcome.report.epochs.last() {
                println!(
                    "epoch {}: train loss {:.4}, holdout loss {:.4}, holdout accuracy {:.4}",
                    last.epoch, last.train_loss, last.holdout_loss, last.holdout_accuracy
                );
            }
            println!("model written to {}", outcome.model_path.display());
        }
        Command::Evaluate { model, per_slot } => {
            let reports = cmd_compare(&ctx, &["ml".to_string()], &model, per_slot, "evaluate")?;
            print_table(&reports);
        }
        Command::Compare {
            scheduler,
            model,
            per_slot,
        } => {
            let reports = cmd_compare(&ctx, &scheduler, &model, per_slot, "compare")?;
            print_table(&reports);
        }
    }
    Ok(())
}

fn print_table(reports: &[MetricReport]) {
    println!(
        "{:<24} {:>9} {:>12} {:>10} {:>9} {:>9} {:>12}",
        "scheduler", "episodes", "PF [nats]", "geo-mean", "|M|", "chordal", "median [us]"
    );
    for r in reports {
        println!(
            "{:<24} {:>9} {:>12.4} {:>10.4} {:>9.3} {:>9.4} {:>12.1}",
            r.scheduler,
            r.episodes,
            r.pf_mean,
            r.geo_mean_mean,
            r.mean_selected,
            r.mean_min_chordal,
            r.time_p50_us
        );
    }
}

// ---------------------------------------------------------------------------
// Scheduler construction

/// A named selector ready to run.
pub struct NamedSelector {
    pub label: String,
    pub selector: Box<dyn UserSelector>,
    pub model_path: Option<PathBuf>,
}

fn parse_kind(name: &str) -> CliResult<SchedulerKind> {
    name.parse().map_err(CliError::Usage)
}

/// Expands scheduler names into selectors; `ml` yields one selector per model.
pub fn build_selectors(
    config: &SystemConfig,
    names: &[String],
    models: &[PathBuf],
) -> CliResult<Vec<NamedSelector>> {
    let mut out = Vec::new();
    for name in names {
        match parse_kind(name)? {
            SchedulerKind::Greedy => out.push(plain("greedy", Box::new(Greedy))),
            SchedulerKind::Top1 => out.push(plain("top1", Box::new(TopK(Some(1))))),
            SchedulerKind::TopN => out.push(plain("topN", Box::new(TopK(None)))),
            SchedulerKind::Adaptive => out.push(plain("adaptive", Box::new(AdaptiveTopK))),
            SchedulerKind::Idle => out.push(plain("idle", Box::new(Idle))),
            SchedulerKind::Exhaustive => {
                // The cap bounds subset evaluations per episode, not per slot.
                let subsets = subset_count(config.num_users, config.n_max);
                let per_episode = subsets.saturating_mul(config.steps as u128);
                let cap = config.scheduler.exhaustive_cap;
                if per_episode > cap as u128 {
                    return Err(CliError::Usage(format!(
                        "exhaustive search over {subsets} subsets in each of {} slots exceeds the cap of {cap} \
                         evaluations per episode; reduce num_users, n_max or steps to desk-scale values",
                        config.steps
                    )));
                }
                out.push(plain("exhaustive", Box::new(Exhaustive { cap })));
            }
            SchedulerKind::Ml => {
                if models.is_empty() {
                    return Err(CliError::Usage(
                        "the ml scheduler needs --model <path>".into(),
                    ));
                }
                for path in models {
                    let model = SelectorModel::load(path)
                        .with_context(|| format!("cannot load model {}", path.display()))?;
                    if model.n_users != config.num_users {
                        return Err(CliError::Usage(format!(
                            "model {} was trained for {} users, config has {}",
                            path.display(),
                            model.n_users,
                            config.num_users
                        )));
                    }
                    let label = if models.len() == 1 {
                        "ml".to_string()
                    } else {
                        format!("ml[{}]", model.mode)
                    };
                    let mut selector = MlSelector::new(model);
                    selector.label = label.clone();
                    out.push(NamedSelector {
                        label,
                        selector: Box::new(selector),
                        model_path: Some(path.clone()),
                    });
                }
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for s in &out {
        if !seen.insert(s.label.clone()) {
            return Err(CliError::Usage(format!(
                "scheduler `{}` requested twice",
                s.label
            )));
        }
    }
    Ok(out)
}

fn plain(label: &str, selector: Box<dyn UserSelector>) -> NamedSelector {
    NamedSelector {
        label: label.to_string(),
        selector,
        model_path: None,
    }
}

// ---------------------------------------------------------------------------
// Episodes

/// Runs test episodes `0..episodes`, merged by episode index.
pub fn run_test_episodes(
    sim: &Simulator,
    selector: &dyn UserSelector,
    episodes: usize,
    keep_slots: bool,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<Vec<EpisodeTrace>> {
    let seed = sim.config.seed;
    pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|e| {
                sim.run_episode(
                    e,
                    episode_seed(seed, SeedStream::Test, e),
                    selector,
                    keep_slots,
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(anyhow::Error::from)
}

/// Shared implementation of `simulate`, `evaluate` and `compare`.
pub fn cmd_compare(
    ctx: &RunContext,
    schedulers: &[String],
    models: &[PathBuf],
    per_slot: bool,
    command: &str,
) -> CliResult<Vec<MetricReport>> {
    if schedulers.is_empty() {
        return Err(CliError::Usage("no scheduler given".into()));
    }
    let selectors = build_selectors(&ctx.config, schedulers, models)?;
    let episodes = ctx.test_episodes();
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let sim = Simulator::new(ctx.config.clone())?;
    ctx.prepare_out()?;
    let pool = ctx.pool()?;
    let keep = per_slot || ctx.config.experiment.keep_slots;

    let mut reports = Vec::new();
    let mut all_traces = Vec::new();
    for s in &selectors {
        let traces = run_test_episodes(&sim, s.selector.as_ref(), episodes, keep, &pool)?;
        let report = MetricReport::from_traces(&s.label, &traces).map_err(anyhow::Error::from)?;
        write_cdf(
            &ctx.out.join(format!("cdf_{}.csv", file_label(&s.label))),
            &report,
        )?;
        if keep {
            write_per_slot(
                &ctx.out
                    .join(format!("perslot_{}.csv", file_label(&s.label))),
                &s.label,
                &traces,
            )?;
        }
        reports.push(report);
        all_traces.push((s.label.clone(), traces));
    }
    write_summary(&ctx.out.join("summary.csv"), &reports)?;
    write_timing(&ctx.out.join("timing.csv"), &reports)?;
    write_episodes(&ctx.out.join("episodes.csv"), &all_traces)?;
    if selectors.len() > 1 {
        write_paired_wins(&ctx.out.join("paired_wins.csv"), &all_traces)?;
    }
    let mut manifest = Manifest::new(command, ctx, episodes);
    manifest.schedulers = selectors.iter().map(|s| s.label.clone()).collect();
    for s in &selectors {
        if let Some(p) = &s.model_path {
            manifest.models.push(FileDigest::of(p)?);
        }
    }
    manifest.write(&ctx.out)?;
    Ok(reports)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

// ---------------------------------------------------------------------------
// Dataset and training

/// Generates greedy-labelled episodes `0..N_e` of the training stream,
/// chunked across workers and concatenated in episode order.
pub fn generate_training_set(ctx: &RunContext, mode: InputMode) -> anyhow::Result<TrainingSet> {
    let episodes = ctx.train_episodes();
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let sim = Simulator::new(ctx.config.clone())?;
    let pool = ctx.pool()?;
    let chunk = episodes.div_ceil(ctx.jobs * 4).max(1);
    let parts: Vec<TrainingSet> = pool.install(|| {
        (0..episodes)
            .step_by(chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                ml::generate_dataset(
                    &sim,
                    mode,
                    SeedStream::Train,
                    start..(start + chunk).min(episodes),
                )
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    TrainingSet::concat(parts).map_err(anyhow::Error::from)
}

fn input_mode(ctx: &RunContext, flag: Option<&str>) -> CliResult<InputMode> {
    let text = flag.unwrap_or(&ctx.config.ml.input_mode);
    text.parse()
        .map_err(|e: hbsel_core::ModelError| CliError::Usage(e.to_string()))
}

pub fn cmd_gen_dataset(ctx: &RunContext, mode: Option<&str>) -> CliResult<TrainingSet> {
    let mode = input_mode(ctx, mode)?;
    ctx.prepare_out()?;
    let ds = generate_training_set(ctx, mode)?;
    let path = ctx.out.join("dataset.bin");
    ds.save(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    let mut manifest = Manifest::new("gen-dataset", ctx, ds.episodes);
    manifest.input_mode = Some(mode.to_string());
    manifest.samples = Some(ds.len());
    manifest.write(&ctx.out)?;
    Ok(ds)
}

#[derive(Debug, Default, Clone)]
pub struct TrainArgs {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub input_mode: Option<String>,
}

pub struct TrainOutcome {
    pub model: SelectorModel,
    pub model_path: PathBuf,
    pub report: ml::TrainReport,
}

pub fn cmd_train(ctx: &RunContext, args: &TrainArgs) -> CliResult<TrainOutcome> {
    let cfg = &ctx.config;
    ctx.prepare_out()?;
    let resumed = match &args.resume {
        Some(p) => Some(
            SelectorModel::load(p).with_context(|| format!("cannot load model {}", p.display()))?,
        ),
        None => None,
    };
    let mode = match (&resumed, &args.input_mode) {
        (Some(m), None) => m.mode,
        _ => input_mode(ctx, args.input_mode.as_deref())?,
    };
    let data = match &args.dataset {
        Some(p) => {
            TrainingSet::load(p).with_context(|| format!("cannot read dataset {}", p.display()))?
        }
        None => generate_training_set(ctx, mode)?,
    };
    let data = if data.mode == mode {
        data
    } else {
        data.project(mode)
            .map_err(|e| CliError::Usage(e.to_string()))?
    };
    if data.n_users != cfg.num_users {
        return Err(CliError::Usage(format!(
            "dataset has {} users, config has {}",
            data.n_users, cfg.num_users
        )));
    }
    let (train_rows, holdout_rows) = data.split(cfg.ml.holdout_fraction);
    let mut model = match resumed {
        Some(m) => {
            if m.mode != mode || m.n_users != data.n_users {
                return Err(CliError::Usage(format!(
                    "model expects input {} for {} users, dataset provides {} for {}",
                    m.mode, m.n_users, mode, data.n_users
                )));
            }
            m
        }
        None => SelectorModel::new(
            mode,
            data.n_users,
            &cfg.ml.hidden,
            data.fit_normalizer(train_rows.clone(), cfg.ml.log_inputs),
            cfg.ml.seed,
        ),
    };
    let mut opts = TrainOptions::from_config(&cfg.ml);
    if let Some(e) = args.epochs {
        opts.epochs = e;
    }
    if let Some(lr) = args.lr {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(CliError::Usage("--lr must be positive".into()));
        }
        opts.learning_rate = lr;
    }
    let mut curve = csv::Writer::from_path(ctx.out.join("training_curve.csv"))
        .context("cannot write training curve")?;
    curve
        .write_record(["epoch", "train_loss", "holdout_loss", "holdout_accuracy"])
        .context("csv")?;
    let report = ml::train(&mut model, &data, train_rows, holdout_rows, &opts, |e| {
        eprintln!(
            "epoch {:>4}  train {:.5}  holdout {:.5}  accuracy {:.4}",
            e.epoch, e.train_loss, e.holdout_loss, e.holdout_accuracy
        );
        let _ = curve.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.holdout_loss.to_string(),
            e.holdout_accuracy.to_string(),
        ]);
    })
    .map_err(anyhow::Error::from)?;
    curve.flush().context("cannot write training curve")?;

    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| ctx.out.join("model.bin"));
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    model
        .save(&model_path)
        .with_context(|| format!("cannot write {}", model_path.display()))?;
    let mut manifest = Manifest::new("train", ctx, data.episodes);
    manifest.input_mode = Some(mode.to_string());
    manifest.samples = Some(data.len());
    manifest.epochs = Some(opts.epochs);
    manifest.models.push(FileDigest::of(&model_path)?);
    manifest.write(&ctx.out)?;
    Ok(TrainOutcome {
        model,
        model_path,
        report,
    })
}

// ---------------------------------------------------------------------------
// Outputs

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub config: SystemConfig,
    pub seed: u64,
    pub episodes: usize,
    pub jobs: usize,
    pub schedulers: Vec<String>,
    pub models: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

pub fn config_hash(config: &SystemConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml_string().as_bytes()))
}

impl Manifest {
    fn new(command: &str, ctx: &RunContext, episodes: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: config_hash(&ctx.config),
            config: ctx.config.clone(),
            seed: ctx.config.seed,
            episodes,
            jobs: ctx.jobs,
            schedulers: Vec::new(),
            models: Vec::new(),
            input_mode: None,
            samples: None,
            epochs: None,
        }
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

fn write_summary(path: &Path, reports: &[MetricReport]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "scheduler",
        "episodes",
        "pf_mean_nats",
        "pf_std_nats",
        "geo_mean_bps_hz",
        "mean_selected_users",
        "mean_min_chordal",
    ])?;
    for r in reports {
        w.write_record([
            r.scheduler.clone(),
            r.episodes.to_string(),
            r.pf_mean.to_string(),
            r.pf_std.to_string(),
            r.geo_mean_mean.to_string(),
            r.mean_selected.to_string(),
            r.mean_min_chordal.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_timing(path: &Path, reports: &[MetricReport]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scheduler", "median_us", "p90_us", "p99_us", "mean_us"])?;
    for r in reports {
        w.write_record([
            r.scheduler.clone(),
            r.time_p50_us.to_string(),
            r.time_p90_us.to_string(),
            r.time_p99_us.to_string(),
            r.time_mean_us.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_cdf(path: &Path, report: &MetricReport) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["geo_mean_bps_hz", "cumulative_probability"])?;
    for (v, p) in report.geo_mean_cdf() {
        w.write_record([v.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_episodes(path: &Path, runs: &[(String, Vec<EpisodeTrace>)]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "scheduler",
        "episode",
        "seed",
        "pf_nats",
        "geo_mean_bps_hz",
        "mean_selected_users",
        "mean_min_chordal",
    ])?;
    for (label, traces) in runs {
        for t in traces {
            let row =
                hbsel_core::metrics::EpisodeRow::from_trace(t).map_err(anyhow::Error::from)?;
            w.write_record([
                label.clone(),
                t.episode.to_string(),
                t.seed.to_string(),
                row.pf_nats.to_string(),
                row.geo_mean.to_string(),
                row.mean_selected.to_string(),
                row.mean_min_chordal.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fraction of episodes on which the row scheduler's PF is at least the
/// column scheduler's.
fn write_paired_wins(path: &Path, runs: &[(String, Vec<EpisodeTrace>)]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scheduler", "versus", "episodes", "win_fraction"])?;
    for (a, ta) in runs {
        for (b, tb) in runs {
            if a == b {
                continue;
            }
            let wins = ta
                .iter()
                .zip(tb)
                .filter(|(x, y)| x.pf_nats >= y.pf_nats)
                .count();
            w.write_record([
                a.clone(),
                b.clone(),
                ta.len().to_string(),
                (wins as f64 / ta.len() as f64).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_per_slot(path: &Path, label: &str, traces: &[EpisodeTrace]) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "episode",
        "t",
        "scheduler",
        "num_selected",
        "selected",
        "feasible",
        "q",
        "sum_rate_bps_hz",
        "min_served_rate_bps_hz",
        "slot_time_us",
    ])?;
    for t in traces {
        let slots = t
            .slots
            .as_ref()
            .ok_or_else(|| anyhow!("per-slot logs were not kept"))?;
        for s in slots {
            let served: Vec<f64> = s.selected.iter().map(|&i| s.rates[i]).collect();
            let min_rate = served.iter().copied().fold(f64::INFINITY, f64::min);
            w.write_record([
                t.episode.to_string(),
                s.t.to_string(),
                label.to_string(),
                if s.feasible { s.selected.len() } else { 0 }.to_string(),
                s.selected
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                s.feasible.to_string(),
                s.q.to_string(),
                s.rates.iter().sum::<f64>().to_string(),
                if served.is_empty() || !s.feasible {
                    String::new()
                } else {
                    min_rate.to_string()
                },
                s.slot_time_us.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
