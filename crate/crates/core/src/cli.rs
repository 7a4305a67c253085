//! Command-line front end: `train`, `unlearn`, `evaluate`, `compare`, `ablate`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 run failure.
//! `UNLEARNQ_THREADS` caps the number of seeds run in parallel.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{average_gap, evaluate};
use crate::net::Model;
use crate::runner::{self, seed_dir};
use crate::unlearner::Method;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUN: i32 = 3;

pub const THREADS_ENV: &str = "UNLEARNQ_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "unlearnq",
    version,
    about = "Quantization-aware machine unlearning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the original model and write its checkpoint.
    Train(Common),
    /// Unlearn the forget set from a trained checkpoint and score it.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Score a checkpoint against the retrained reference.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the seed's original checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Aggregate several methods over several seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method names.
        #[arg(long, default_value = "oeu,ft,ga,rl")]
        method: String,
    },
    /// Compare OEU with its ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oeu,oeu_no_gop,oeu_no_egu,oeu_global")]
        method: String,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single seed (overrides `seeds`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `unlearn.alpha`.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Overrides `unlearn.beta`.
    #[arg(long)]
    pub beta: Option<String>,
    /// Overrides `quant.bits`.
    #[arg(long)]
    pub bits: Option<String>,
    /// Arbitrary `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        for (key, v) in [
            ("unlearn.alpha", &self.alpha),
            ("unlearn.beta", &self.beta),
            ("quant.bits", &self.bits),
            ("seeds", &self.seeds),
        ] {
            if let Some(v) = v {
                overrides.push((key.into(), v.clone()));
            }
        }
        if let Some(s) = self.seed {
            overrides.push(("seeds".into(), s.to_string()));
        }
        if let Some(o) = &self.out {
            overrides.push(("out".into(), o.display().to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            overrides.push((k.trim().into(), v.trim().into()));
        }
        for (k, v) in overrides {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("override {k}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').map(|m| m.trim().parse()).collect()
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUN,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            for &seed in &cfg.seeds {
                let path = cmd_train(&cfg, seed)?;
                writeln!(out, "{}", path.display())?;
            }
            Ok(EXIT_OK)
        }
        Command::Unlearn { common, method } => {
            let method: Method = method.parse()?;
            let cfg = common.resolve()?;
            for &seed in &cfg.seeds {
                let path = cmd_unlearn(&cfg, method, seed)?;
                writeln!(out, "{}", path.display())?;
            }
            Ok(EXIT_OK)
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.resolve()?;
            let seed = cfg.seeds[0];
            let path = checkpoint.unwrap_or_else(|| seed_dir(&cfg.out, seed).join("original.ckpt"));
            let report = cmd_evaluate(&cfg, seed, &path)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(EXIT_OK)
        }
        Command::Compare { common, method } => table(common, &method, "compare", out),
        Command::Ablate { common, method } => table(common, &method, "ablate", out),
    }
}

fn table(common: Common, methods: &str, name: &str, out: &mut dyn Write) -> Result<i32> {
    let methods = parse_methods(methods)?;
    let cfg = common.resolve()?;
    let pool = thread_pool()?;
    let table = pool.install(|| runner::compare(&cfg, &methods, &cfg.seeds))?;
    crate::io::write_atomic(
        &cfg.out.join(format!("{name}.csv")),
        table.to_csv().as_bytes(),
    )?;
    crate::io::write_atomic(
        &cfg.out.join(format!("{name}.txt")),
        table.to_text().as_bytes(),
    )?;
    crate::io::write_atomic(
        &cfg.out.join(format!("{name}.json")),
        serde_json::to_string_pretty(&table)?.as_bytes(),
    )?;
    write!(out, "{}", table.to_text())?;
    let failed = table.rows.iter().any(|r| !r.failures.is_empty());
    for r in &table.rows {
        for f in &r.failures {
            writeln!(out, "failed {}: {f}", r.method)?;
        }
    }
    Ok(if failed { EXIT_RUN } else { EXIT_OK })
}

/// Trains the original model for `seed`; returns the checkpoint path.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let split = runner::prepare_split(cfg, seed)?;
    let (model, trace) = runner::train_original(cfg, seed, &split)?;
    let dir = seed_dir(&cfg.out, seed);
    let path = dir.join("original.ckpt");
    model.save(&path)?;
    trace.save_jsonl(dir.join("train.jsonl"))?;
    crate::io::write_atomic(&dir.join("config.txt"), cfg.canonical().as_bytes())?;
    Ok(path)
}

/// Unlearns with `method` from the seed's original checkpoint; returns the report path.
pub fn cmd_unlearn(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<PathBuf> {
    let dir = seed_dir(&cfg.out, seed);
    let ckpt = dir.join("original.ckpt");
    if !ckpt.exists() {
        return Err(Error::Data(format!(
            "missing checkpoint {} (run `unlearnq train` first)",
            ckpt.display()
        )));
    }
    let theta0 = Model::load(&ckpt)?;
    let split = runner::prepare_split(cfg, seed)?;
    let reference = runner::cached_retrain(cfg, seed, &split, Some(&cfg.out.join("cache")))?;
    let outcome = runner::run_method(cfg, method, seed, &split, &theta0, &reference)?;
    outcome.model.save(dir.join(format!("{method}.ckpt")))?;
    outcome
        .trace
        .save_jsonl(dir.join(format!("{method}.jsonl")))?;
    outcome.report.save(&dir)
}

/// Metrics of an arbitrary checkpoint against the reference for `seed`.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: &std::path::Path,
) -> Result<crate::metrics::MetricsReport> {
    if !checkpoint.exists() {
        return Err(Error::Data(format!(
            "missing checkpoint {}",
            checkpoint.display()
        )));
    }
    let model = Model::load(checkpoint)?;
    let split = runner::prepare_split(cfg, seed)?;
    let reference = runner::cached_retrain(cfg, seed, &split, Some(&cfg.out.join("cache")))?;
    Ok(average_gap(
        &evaluate(&model, &split)?.raw,
        &evaluate(&reference, &split)?.raw,
    ))
}
