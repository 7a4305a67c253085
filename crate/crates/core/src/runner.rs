//! End-to-end experiment execution: data, original model, reference model,
//! unlearning run, metrics and reports.
//!
//! Run directory layout under `out`:
//!
//! ```text
//! seed-<s>/original.ckpt          original model
//! seed-<s>/train.jsonl            its training trace
//! seed-<s>/<method>.ckpt          unlearned model
//! seed-<s>/<method>.jsonl         unlearning trace
//! seed-<s>/<method>.report.json   MetricsReport plus provenance
//! seed-<s>/<method>.csv           the same report as one CSV row
//! cache/retrain-<key>.ckpt        retrained reference, keyed by its inputs
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::data::{gen_synthetic, split_classwise, split_random, train_test_split, Split};
use crate::error::{Error, Result};
use crate::losses::mean_entropy;
use crate::metrics::{
    average_gap, evaluate, Evaluation, MetricsReport, RawMetrics, MIA_CONVENTION,
};
use crate::net::Model;
use crate::unlearner::{self, Method, RunTrace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed column order of report CSV rows.
pub const CSV_HEADER: &str =
    "method,seed,fa,ra,ta,mia,ag,gap_fa,gap_ra,gap_ta,gap_mia,forget_entropy,config_hash";

/// Generates the dataset and forget/retain/test split for `seed`.
pub fn prepare_split(cfg: &ExperimentConfig, seed: u64) -> Result<Split> {
    let data = gen_synthetic(&cfg.synthetic_spec(seed))?;
    let (train, test) = train_test_split(
        &data,
        cfg.data.test_fraction,
        crate::config::derive_seed(seed, "test"),
    )?;
    match cfg.split.scenario {
        ScenarioKind::Random => split_random(
            &train,
            &test,
            cfg.split.ratio,
            crate::config::derive_seed(seed, "split"),
        ),
        ScenarioKind::Classwise => split_classwise(&train, &test, cfg.split.class),
    }
}

pub fn train_original(
    cfg: &ExperimentConfig,
    seed: u64,
    split: &Split,
) -> Result<(Model, RunTrace)> {
    unlearner::train_original(&split.train, &cfg.net_config()?, &cfg.train_opt(seed))
}

pub fn retrain(cfg: &ExperimentConfig, seed: u64, split: &Split) -> Result<(Model, RunTrace)> {
    unlearner::retrain(&split.retain, &cfg.net_config()?, &cfg.retrain_opt(seed))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// The retrained reference, read from `cache_dir` when present and written
/// there otherwise.
pub fn cached_retrain(
    cfg: &ExperimentConfig,
    seed: u64,
    split: &Split,
    cache_dir: Option<&Path>,
) -> Result<Model> {
    let path = cache_dir.map(|d| d.join(format!("retrain-{}.ckpt", cfg.retrain_key(seed))));
    if let Some(p) = &path {
        if p.exists() {
            return Model::load(p);
        }
    }
    let (model, _) = retrain(cfg, seed, split)?;
    if let Some(p) = &path {
        model.save(p)?;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub metrics: MetricsReport,
    pub retrain: RawMetrics,
    pub original: RawMetrics,
    pub mia_convention: String,
    pub mia_degenerate: bool,
    pub forget_entropy: f64,
    pub original_forget_entropy: f64,
    pub steps: usize,
    pub wall_clock_ms: f64,
    /// Canonical config text; re-running it reproduces these metrics.
    pub config: String,
}

impl RunReport {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.seed,
            m.fa,
            m.ra,
            m.ta,
            m.mia,
            m.ag,
            m.gaps.fa,
            m.gaps.ra,
            m.gaps.ta,
            m.gaps.mia,
            self.forget_entropy,
            self.config_hash
        )
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let json = dir.join(format!("{}.report.json", self.method));
        crate::io::write_atomic(&json, serde_json::to_string_pretty(self)?.as_bytes())?;
        let csv = format!("{CSV_HEADER}\n{}\n", self.csv_row());
        crate::io::write_atomic(&dir.join(format!("{}.csv", self.method)), csv.as_bytes())?;
        Ok(json)
    }
}

/// Everything a single `(method, seed)` run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub model: Model,
    pub trace: RunTrace,
    pub evaluation: Evaluation,
}

/// Runs `method` from `theta0` and scores it against `reference`.
///
/// For `retrain` the reference itself is the result.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    split: &Split,
    theta0: &Model,
    reference: &Model,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let (model, trace) = if method == Method::Retrain {
        (reference.clone(), RunTrace::default())
    } else {
        unlearner::unlearn(
            theta0,
            &split.forget,
            &split.retain,
            &cfg.unlearn_config(method, seed),
        )?
    };
    let wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
    let evaluation = evaluate(&model, split)?;
    let retrain_eval = evaluate(reference, split)?;
    let original_eval = evaluate(theta0, split)?;
    let report = RunReport {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        seed,
        method: method.to_string(),
        metrics: average_gap(&evaluation.raw, &retrain_eval.raw),
        retrain: retrain_eval.raw,
        original: original_eval.raw,
        mia_convention: MIA_CONVENTION.to_string(),
        mia_degenerate: evaluation.mia.degenerate,
        forget_entropy: mean_entropy(&model, split.forget.features())?.value,
        original_forget_entropy: mean_entropy(theta0, split.forget.features())?.value,
        steps: trace.len(),
        wall_clock_ms,
        config: cfg.canonical(),
    };
    Ok(RunOutcome {
        report,
        model,
        trace,
        evaluation,
    })
}

/// Data, original model, reference and the listed methods for one seed,
/// entirely in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, methods: &[Method]) -> Result<Vec<RunOutcome>> {
    let split = prepare_split(cfg, seed)?;
    let (theta0, _) = train_original(cfg, seed, &split)?;
    let (reference, _) = retrain(cfg, seed, &split)?;
    methods
        .iter()
        .map(|&m| run_method(cfg, m, seed, &split, &theta0, &reference))
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub runs: usize,
    pub failures: Vec<String>,
    pub fa: Stat,
    pub ra: Stat,
    pub ta: Stat,
    pub mia: Stat,
    pub ag: Stat,
    pub gap_fa: Stat,
    pub gap_ra: Stat,
    pub gap_ta: Stat,
    pub gap_mia: Stat,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    /// Aggregates per-method reports; `failures` lists `(method, message)` pairs.
    pub fn from_reports(
        config_hash: String,
        seeds: Vec<u64>,
        methods: &[Method],
        reports: &[RunReport],
        failures: &[(Method, String)],
    ) -> Self {
        let nan = Stat {
            mean: f64::NAN,
            std: f64::NAN,
        };
        let mut rows: Vec<CompareRow> = methods
            .iter()
            .map(|&m| {
                let rs: Vec<&RunReport> =
                    reports.iter().filter(|r| r.method == m.as_str()).collect();
                let col = |f: &dyn Fn(&MetricsReport) -> f64| {
                    if rs.is_empty() {
                        return nan;
                    }
                    let xs: Vec<f64> = rs.iter().map(|r| f(&r.metrics)).collect();
                    let (mean, std) = mean_std(&xs);
                    Stat { mean, std }
                };
                CompareRow {
                    method: m.to_string(),
                    runs: rs.len(),
                    failures: failures
                        .iter()
                        .filter(|(fm, _)| *fm == m)
                        .map(|(_, e)| e.clone())
                        .collect(),
                    fa: col(&|r| r.fa),
                    ra: col(&|r| r.ra),
                    ta: col(&|r| r.ta),
                    mia: col(&|r| r.mia),
                    ag: col(&|r| r.ag),
                    gap_fa: col(&|r| r.gaps.fa),
                    gap_ra: col(&|r| r.gaps.ra),
                    gap_ta: col(&|r| r.gaps.ta),
                    gap_mia: col(&|r| r.gaps.mia),
                    best: false,
                }
            })
            .collect();
        // Lowest mean AG among methods other than the reference itself.
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method != Method::Retrain.as_str() && r.ag.mean.is_finite())
            .min_by(|a, b| a.1.ag.mean.total_cmp(&b.1.ag.mean))
            .map(|(i, _)| i);
        if let Some(i) = best {
            rows[i].best = true;
        }
        Self {
            config_hash,
            seeds,
            rows,
        }
    }

    pub fn row(&self, method: Method) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.method == method.as_str())
    }

    pub const CSV_HEADER: &'static str = "method,runs,failures,fa_mean,fa_std,ra_mean,ra_std,ta_mean,ta_std,mia_mean,mia_std,ag_mean,ag_std,gap_fa,gap_ra,gap_ta,gap_mia,best";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.runs,
                r.failures.len(),
                r.fa.mean,
                r.fa.std,
                r.ra.mean,
                r.ra.std,
                r.ta.mean,
                r.ta.std,
                r.mia.mean,
                r.mia.std,
                r.ag.mean,
                r.ag.std,
                r.gap_fa.mean,
                r.gap_ra.mean,
                r.gap_ta.mean,
                r.gap_mia.mean,
                r.best
            );
        }
        s
    }

    /// Aligned text table; `*` marks the lowest-AG method, `!` rows with failed runs.
    pub fn to_text(&self) -> String {
        let cell = |s: Stat, gap: Option<Stat>| match gap {
            Some(g) => format!("{:6.2} ±{:5.2} ({:5.2})", s.mean, s.std, g.mean),
            None => format!("{:6.2} ±{:5.2}", s.mean, s.std),
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "  {:<11} {:>4}  {:<22} {:<22} {:<22} {:<22} AG",
            "method", "runs", "FA (gap)", "RA (gap)", "TA (gap)", "MIA (gap)"
        );
        for r in &self.rows {
            let mark = if r.best {
                '*'
            } else if !r.failures.is_empty() {
                '!'
            } else {
                ' '
            };
            let _ = writeln!(
                out,
                "{mark} {:<11} {:>4}  {:<22} {:<22} {:<22} {:<22} {}",
                r.method,
                r.runs,
                cell(r.fa, Some(r.gap_fa)),
                cell(r.ra, Some(r.gap_ra)),
                cell(r.ta, Some(r.gap_ta)),
                cell(r.mia, Some(r.gap_mia)),
                cell(r.ag, None)
            );
        }
        let _ = writeln!(
            out,
            "seeds: {:?}  config: {}",
            self.seeds,
            &self.config_hash[..12]
        );
        let _ = writeln!(out, "{MIA_CONVENTION}");
        out
    }
}

/// Reports of one seed plus the methods that failed on it.
type SeedReports = (Vec<RunReport>, Vec<(Method, String)>);

/// Every `(seed, method)` report for `methods`, seeds in parallel. A failing
/// seed or method becomes a failure entry instead of aborting the table.
pub fn compare(cfg: &ExperimentConfig, methods: &[Method], seeds: &[u64]) -> Result<CompareTable> {
    if methods.is_empty() {
        return Err(Error::Config("compare needs at least one method".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    use rayon::prelude::*;
    let per_seed: Vec<SeedReports> = seeds
        .par_iter()
        .map(|&seed| seed_reports(cfg, seed, methods))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        reports.extend(r);
        failures.extend(f);
    }
    Ok(CompareTable::from_reports(
        cfg.hash(),
        seeds.to_vec(),
        methods,
        &reports,
        &failures,
    ))
}

fn seed_reports(cfg: &ExperimentConfig, seed: u64, methods: &[Method]) -> SeedReports {
    let setup = prepare_split(cfg, seed).and_then(|split| {
        let theta0 = train_original(cfg, seed, &split)?.0;
        let reference = retrain(cfg, seed, &split)?.0;
        Ok((split, theta0, reference))
    });
    let (split, theta0, reference) = match setup {
        Ok(s) => s,
        Err(e) => {
            let msg = format!("seed {seed}: {e}");
            return (
                Vec::new(),
                methods.iter().map(|&m| (m, msg.clone())).collect(),
            );
        }
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &m in methods {
        match run_method(cfg, m, seed, &split, &theta0, &reference) {
            Ok(o) => reports.push(o.report),
            Err(e) => failures.push((m, format!("seed {seed}: {e}"))),
        }
    }
    (reports, failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::parse(
            "data.samples = 160\nnet.hidden = 8\ntrain.epochs = 5\nunlearn.epochs = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn retrain_scores_zero_gap_against_itself() {
        let out = run_seed(&tiny(), 0, &[Method::Retrain]).unwrap();
        assert_eq!(out[0].report.metrics.ag, 0.0);
    }

    #[test]
    fn single_run_table_equals_its_report() {
        let cfg = tiny();
        let report = run_seed(&cfg, 4, &[Method::Oeu]).unwrap().remove(0).report;
        let table = compare(&cfg, &[Method::Oeu], &[4]).unwrap();
        let row = table.row(Method::Oeu).unwrap();
        assert_eq!(row.fa.mean, report.metrics.fa);
        assert_eq!(row.mia.mean, report.metrics.mia);
        assert_eq!(row.ag.mean, report.metrics.ag);
        assert_eq!(row.ag.std, 0.0);
        assert!(row.best);
    }

    #[test]
    fn compare_rejects_empty_inputs() {
        assert!(compare(&tiny(), &[], &[0]).is_err());
        assert!(compare(&tiny(), &[Method::Oeu], &[]).is_err());
    }

    #[test]
    fn failures_are_flagged_in_the_table() {
        let cfg = tiny();
        let reports = run_seed(&cfg, 0, &[Method::Ga]).unwrap();
        let table = CompareTable::from_reports(
            cfg.hash(),
            vec![0, 1],
            &[Method::Ga, Method::Rl],
            &[reports[0].report.clone()],
            &[(Method::Rl, "seed 1: diverged".into())],
        );
        assert_eq!(table.row(Method::Rl).unwrap().runs, 0);
        assert!(table.to_text().lines().any(|l| l.starts_with('!')));
        assert_eq!(table.to_csv().lines().count(), 3);
    }

    #[test]
    fn csv_row_matches_header() {
        let out = run_seed(&tiny(), 1, &[Method::Oeu]).unwrap();
        let row = out[0].report.csv_row();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }
}
