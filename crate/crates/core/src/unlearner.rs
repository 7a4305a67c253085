//! Training drivers: the original model, the retrained reference, orthogonal
//! entropy unlearning and the baselines and ablations it is compared with.
//!
//! Every driver is plain SGD with optional cosine annealing and is fully
//! determined by its config and seed. Unlearning drivers keep the quantization
//! grids of the model they start from; training drivers recalibrate at the
//! start of every epoch and once more at the end.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::gop::{self, ProjectionConfig, ProjectionMode};
use crate::losses::{mean_entropy, LossKind};
use crate::net::{GradientSet, Model, NetConfig};

/// Rows used to fit activation grids.
pub const CALIBRATION_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oeu,
    Ft,
    Ga,
    Rl,
    Retrain,
    OeuNoGop,
    OeuNoEgu,
    OeuGlobal,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Oeu,
        Method::Ft,
        Method::Ga,
        Method::Rl,
        Method::Retrain,
        Method::OeuNoGop,
        Method::OeuNoEgu,
        Method::OeuGlobal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oeu => "oeu",
            Method::Ft => "ft",
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::Retrain => "retrain",
            Method::OeuNoGop => "oeu_no_gop",
            Method::OeuNoEgu => "oeu_no_egu",
            Method::OeuGlobal => "oeu_global",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Ft | Method::Ga | Method::Rl)
    }

    pub fn is_ablation(self) -> bool {
        matches!(
            self,
            Method::OeuNoGop | Method::OeuNoEgu | Method::OeuGlobal
        )
    }

    pub fn valid_names() -> String {
        Method::ALL.map(Method::as_str).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    Method::valid_names()
                ))
            })
    }
}

/// SGD schedule shared by all drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Cosine-anneal the learning rate towards zero over the run.
    pub cosine: bool,
    pub batch_size: usize,
    /// One step per epoch over the whole sets instead of minibatches.
    pub full_batch: bool,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.1,
            cosine: true,
            batch_size: 32,
            full_batch: false,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if self.cosine && total > 0 {
            let t = step as f64 / total as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    pub opt: OptConfig,
    /// Weight of the retain gradient. It scales `g_r` before projection and
    /// in the update.
    pub beta: f64,
    pub projection: ProjectionConfig,
}

impl UnlearnConfig {
    pub fn new(method: Method, opt: OptConfig) -> Self {
        Self {
            method,
            opt,
            beta: 1.0,
            projection: ProjectionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.opt.validate()?;
        self.projection.validate()?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Condensed gradient geometry for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSummary {
    /// `<g_f, g_r>` before projection (with `g_r` already scaled by beta).
    pub dot: f64,
    pub cosine: f64,
    pub conflicted_units: usize,
    pub degenerate_units: usize,
    /// `<g_f_hat, g_r>` over the flattened vectors after projection.
    pub projected_dot: f64,
    /// `<g_f_hat^(u), g_r^(u)>` for every projection unit.
    pub unit_projected_dots: Vec<f64>,
    /// `|g_f^(u)| |g_r^(u)|` for every projection unit.
    pub unit_norm_products: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// The method's forgetting objective on the step's forget batch.
    pub forget_loss: Option<f64>,
    /// Cross-entropy on the step's retain (or training) batch.
    pub retain_loss: Option<f64>,
    /// Mean prediction entropy over the whole forget set after the step.
    pub forget_entropy: Option<f64>,
    pub conflict: Option<ConflictSummary>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Steps whose pre-projection forget/retain gradients conflicted.
    pub fn interference_steps(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.conflict.as_ref().is_some_and(|c| c.dot < 0.0))
            .count()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn read_jsonl(text: &str, method: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<StepRecord>, _>>()?;
        Ok(Self {
            method: method.to_string(),
            records,
        })
    }
}

fn calibration_rows(x: ArrayView2<'_, f64>) -> ArrayView2<'_, f64> {
    let n = x.nrows().min(CALIBRATION_ROWS);
    x.slice_move(ndarray::s![..n, ..])
}

fn gather(data: &LabeledSet, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let x = data.features().select(Axis(0), idx);
    let y = idx.iter().map(|&i| data.labels()[i]).collect();
    (x, y)
}

fn diverged(step: usize, method: &str, trace: &RunTrace) -> Error {
    Error::Diverged {
        step,
        method: method.to_string(),
        trace: Box::new(trace.clone()),
    }
}

/// Maps numeric failures inside a step to a divergence error carrying the trace.
fn guard<T>(r: Result<T>, step: usize, method: &str, trace: &RunTrace) -> Result<T> {
    match r {
        Err(Error::NonFinite { .. }) => Err(diverged(step, method, trace)),
        other => other,
    }
}

fn supervised(
    data: &LabeledSet,
    net: &NetConfig,
    opt: &OptConfig,
    method: &str,
) -> Result<(Model, RunTrace)> {
    opt.validate()?;
    if data.dim() != net.inputs() || data.classes() != net.classes() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} features / {} classes, network expects {} / {}",
            data.dim(),
            data.classes(),
            net.inputs(),
            net.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut model = Model::init(net.clone(), &mut rng)?;
    let n = data.len();
    let per_epoch = if opt.full_batch {
        1
    } else {
        n.div_ceil(opt.batch_size)
    };
    let total = opt.epochs * per_epoch;
    let mut trace = RunTrace::new(method);
    let started = Instant::now();
    let mut order: Vec<usize> = (0..n).collect();
    let calib = calibration_rows(data.features());

    for epoch in 0..opt.epochs {
        model.calibrate(calib)?;
        order.shuffle(&mut rng);
        for s in 0..per_epoch {
            let step = epoch * per_epoch + s;
            let idx = if opt.full_batch {
                &order[..]
            } else {
                &order[s * opt.batch_size..((s + 1) * opt.batch_size).min(n)]
            };
            let (x, y) = gather(data, idx);
            let (loss, g) = guard(
                model.grad(x.view(), Some(&y), LossKind::CrossEntropy),
                step,
                method,
                &trace,
            )?;
            let lr = opt.lr_at(step, total);
            model.params.descend(&g, lr)?;
            trace.records.push(StepRecord {
                step,
                epoch,
                lr,
                forget_loss: None,
                retain_loss: Some(loss),
                forget_entropy: None,
                conflict: None,
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            if !loss.is_finite() || !model.params.is_finite() {
                return Err(diverged(step, method, &trace));
            }
        }
    }
    model.calibrate(calib)?;
    Ok((model, trace))
}

/// Trains the original model on the full training set from a seeded
/// initialization.
pub fn train_original(
    data: &LabeledSet,
    net: &NetConfig,
    opt: &OptConfig,
) -> Result<(Model, RunTrace)> {
    supervised(data, net, opt, "train")
}

/// The reference model: trained from scratch on the retain set only.
pub fn retrain(retain: &LabeledSet, net: &NetConfig, opt: &OptConfig) -> Result<(Model, RunTrace)> {
    supervised(retain, net, opt, Method::Retrain.as_str())
}

/// How the forgetting direction of one step is formed.
#[derive(Clone, Copy)]
enum ForgetObjective {
    None,
    Entropy,
    RandomLabels,
    Ascent,
}

struct Plan {
    forget: ForgetObjective,
    use_retain: bool,
    projection: Option<ProjectionConfig>,
}

fn plan(cfg: &UnlearnConfig) -> Result<Plan> {
    let proj = cfg.projection;
    Ok(match cfg.method {
        Method::Oeu => Plan {
            forget: ForgetObjective::Entropy,
            use_retain: true,
            projection: Some(proj),
        },
        Method::OeuNoGop => Plan {
            forget: ForgetObjective::Entropy,
            use_retain: true,
            projection: Some(ProjectionConfig { alpha: 0.0, ..proj }),
        },
        Method::OeuNoEgu => Plan {
            forget: ForgetObjective::RandomLabels,
            use_retain: true,
            projection: Some(proj),
        },
        Method::OeuGlobal => Plan {
            forget: ForgetObjective::Entropy,
            use_retain: true,
            projection: Some(ProjectionConfig {
                mode: ProjectionMode::Global,
                ..proj
            }),
        },
        Method::Ft => Plan {
            forget: ForgetObjective::None,
            use_retain: true,
            projection: None,
        },
        Method::Ga => Plan {
            forget: ForgetObjective::Ascent,
            use_retain: false,
            projection: None,
        },
        Method::Rl => Plan {
            forget: ForgetObjective::RandomLabels,
            use_retain: true,
            projection: None,
        },
        Method::Retrain => {
            return Err(Error::Config(
                "retrain starts from scratch; call unlearner::retrain".into(),
            ))
        }
    })
}

/// A uniformly drawn label different from `y`.
pub fn wrong_label<R: Rng>(y: usize, classes: usize, rng: &mut R) -> usize {
    let k = rng.gen_range(0..classes - 1);
    if k >= y {
        k + 1
    } else {
        k
    }
}

fn summarize(
    g_f: &GradientSet,
    g_r: &GradientSet,
    projected: &gop::Projected,
) -> Result<ConflictSummary> {
    let d = gop::diagnostics(g_f, g_r)?;
    let unit_projected_dots = projected
        .grads
        .units()
        .iter()
        .zip(g_r.units())
        .map(|(f, r)| crate::net::params::dot(f.values, r.values))
        .collect();
    Ok(ConflictSummary {
        dot: d.dot,
        cosine: d.cosine,
        conflicted_units: d.conflicted_units(),
        degenerate_units: projected.degenerate_units.len(),
        projected_dot: projected.grads.dot(g_r),
        unit_projected_dots,
        unit_norm_products: d
            .units
            .iter()
            .map(|u| u.norm_forget * u.norm_retain)
            .collect(),
    })
}

fn check_sets(theta0: &Model, forget: &LabeledSet, retain: &LabeledSet) -> Result<()> {
    if forget.is_empty() {
        return Err(Error::Empty("forget set"));
    }
    if retain.is_empty() {
        return Err(Error::Empty("retain set"));
    }
    for set in [forget, retain] {
        if set.dim() != theta0.config.inputs() || set.classes() != theta0.config.classes() {
            return Err(Error::ShapeMismatch(
                "dataset does not match the model's input width or class count".into(),
            ));
        }
    }
    Ok(())
}

/// Shared unlearning loop.
///
/// Each epoch has `ceil(|D_f| / batch)` steps (one in full-batch mode). A step
/// pairs a forget batch with a retain batch of the same size, cycling through
/// a shuffled retain set.
fn unlearn_loop(
    theta0: &Model,
    forget: &LabeledSet,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
) -> Result<(Model, RunTrace)> {
    cfg.validate()?;
    check_sets(theta0, forget, retain)?;
    let plan = plan(cfg)?;
    let method = cfg.method.as_str();
    let opt = &cfg.opt;
    let classes = theta0.config.classes();
    let (nf, nr) = (forget.len(), retain.len());
    let per_epoch = if opt.full_batch {
        1
    } else {
        nf.div_ceil(opt.batch_size)
    };
    let total = opt.epochs * per_epoch;

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut model = theta0.clone();
    let mut trace = RunTrace::new(method);
    let started = Instant::now();
    let mut forget_order: Vec<usize> = (0..nf).collect();
    let mut retain_order: Vec<usize> = (0..nr).collect();
    let mut flipped = vec![0usize; nf];

    for epoch in 0..opt.epochs {
        forget_order.shuffle(&mut rng);
        retain_order.shuffle(&mut rng);
        if matches!(plan.forget, ForgetObjective::RandomLabels) {
            for (f, &y) in flipped.iter_mut().zip(forget.labels()) {
                *f = wrong_label(y, classes, &mut rng);
            }
        }
        for s in 0..per_epoch {
            let step = epoch * per_epoch + s;
            let (f_idx, r_idx): (Vec<usize>, Vec<usize>) = if opt.full_batch {
                (forget_order.clone(), retain_order.clone())
            } else {
                let lo = s * opt.batch_size;
                let f_idx = forget_order[lo..(lo + opt.batch_size).min(nf)].to_vec();
                let r_idx = (0..f_idx.len())
                    .map(|j| retain_order[(lo + j) % nr])
                    .collect();
                (f_idx, r_idx)
            };
            let (xf, yf) = gather(forget, &f_idx);
            let (xr, yr) = gather(retain, &r_idx);

            let forget_grad = match plan.forget {
                ForgetObjective::None => None,
                ForgetObjective::Entropy => {
                    Some(model.grad(xf.view(), None, LossKind::NegativeEntropy))
                }
                ForgetObjective::Ascent => {
                    Some(model.grad(xf.view(), Some(&yf), LossKind::NegatedCrossEntropy))
                }
                ForgetObjective::RandomLabels => {
                    let labels: Vec<usize> = f_idx.iter().map(|&i| flipped[i]).collect();
                    Some(model.grad(xf.view(), Some(&labels), LossKind::CrossEntropy))
                }
            }
            .transpose();
            let forget_grad = guard(forget_grad, step, method, &trace)?;
            let retain_grad = if plan.use_retain {
                let r = model.grad(xr.view(), Some(&yr), LossKind::CrossEntropy);
                let (loss, g) = guard(r, step, method, &trace)?;
                Some((loss, g.scaled(cfg.beta)))
            } else {
                None
            };

            let mut conflict = None;
            let update = match (&forget_grad, &retain_grad) {
                (Some((_, g_f)), Some((_, g_r))) => match plan.projection {
                    Some(pc) => {
                        let projected = gop::project(g_f, g_r, &pc)?;
                        conflict = Some(summarize(g_f, g_r, &projected)?);
                        projected.grads.add_scaled(g_r, 1.0)
                    }
                    None => {
                        let identity = gop::Projected {
                            grads: g_f.clone(),
                            degenerate_units: Vec::new(),
                        };
                        conflict = Some(summarize(g_f, g_r, &identity)?);
                        g_f.add_scaled(g_r, 1.0)
                    }
                },
                (Some((_, g_f)), None) => g_f.clone(),
                (None, Some((_, g_r))) => g_r.clone(),
                (None, None) => unreachable!("every method has a gradient source"),
            };
            if !update.is_finite() {
                return Err(diverged(step, method, &trace));
            }
            let lr = opt.lr_at(step, total);
            model.params.descend(&update, lr)?;
            let forget_entropy = guard(
                mean_entropy(&model, forget.features()),
                step,
                method,
                &trace,
            )?;
            trace.records.push(StepRecord {
                step,
                epoch,
                lr,
                forget_loss: forget_grad.as_ref().map(|(l, _)| *l),
                retain_loss: retain_grad.as_ref().map(|(l, _)| *l),
                forget_entropy: Some(forget_entropy.value),
                conflict,
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            if !model.params.is_finite() || !forget_entropy.value.is_finite() {
                return Err(diverged(step, method, &trace));
            }
        }
    }
    Ok((model, trace))
}

/// Orthogonal entropy unlearning: entropy-guided forgetting gradient, projected
/// against the beta-scaled retain gradient, plus that retain gradient.
pub fn run_oeu(
    theta0: &Model,
    forget: &LabeledSet,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
) -> Result<(Model, RunTrace)> {
    if cfg.method != Method::Oeu {
        return Err(Error::Config(format!(
            "run_oeu called with method {}",
            cfg.method
        )));
    }
    unlearn_loop(theta0, forget, retain, cfg)
}

/// Fine-tuning, gradient ascent or random labels.
pub fn run_baseline(
    theta0: &Model,
    forget: &LabeledSet,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
) -> Result<(Model, RunTrace)> {
    if !cfg.method.is_baseline() {
        return Err(Error::Config(format!(
            "{} is not a baseline (ft, ga, rl)",
            cfg.method
        )));
    }
    unlearn_loop(theta0, forget, retain, cfg)
}

/// OEU without projection, without the entropy objective, or with global projection.
pub fn run_ablation(
    theta0: &Model,
    forget: &LabeledSet,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
) -> Result<(Model, RunTrace)> {
    if !cfg.method.is_ablation() {
        return Err(Error::Config(format!(
            "{} is not an ablation (oeu_no_gop, oeu_no_egu, oeu_global)",
            cfg.method
        )));
    }
    unlearn_loop(theta0, forget, retain, cfg)
}

/// Dispatches any method except `retrain`.
pub fn unlearn(
    theta0: &Model,
    forget: &LabeledSet,
    retain: &LabeledSet,
    cfg: &UnlearnConfig,
) -> Result<(Model, RunTrace)> {
    match cfg.method {
        Method::Oeu => run_oeu(theta0, forget, retain, cfg),
        m if m.is_baseline() => run_baseline(theta0, forget, retain, cfg),
        m if m.is_ablation() => run_ablation(theta0, forget, retain, cfg),
        _ => plan(cfg).map(|_| unreachable!("retrain has no plan")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split_random, train_test_split, DatasetKind, SyntheticSpec};
    use crate::losses::forget_loss;
    use crate::metrics::accuracy;
    use crate::net::QuantPolicy;

    fn blobs(classes: usize, samples: usize, noise: f64, seed: u64) -> LabeledSet {
        gen_synthetic(&SyntheticSpec {
            kind: DatasetKind::Blobs,
            classes,
            samples,
            noise,
            dim: 2,
            seed,
        })
        .unwrap()
    }

    fn net(quant: QuantPolicy, classes: usize) -> NetConfig {
        NetConfig::new(vec![2, 16, classes], quant).unwrap()
    }

    fn opt(epochs: usize) -> OptConfig {
        OptConfig {
            epochs,
            lr: 0.1,
            cosine: true,
            batch_size: 16,
            full_batch: false,
            seed: 3,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        let err = "sgd".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("oeu_no_egu"), "{err}");
    }

    #[test]
    fn cosine_schedule() {
        let o = opt(1);
        assert_eq!(o.lr_at(0, 10), 0.1);
        assert!((o.lr_at(5, 10) - 0.05).abs() < 1e-15);
        assert_eq!(OptConfig { cosine: false, ..o }.lr_at(7, 10), 0.1);
    }

    #[test]
    fn separable_blobs_train_to_99_percent() {
        let data = blobs(2, 200, 0.3, 1);
        let (m, trace) = train_original(&data, &net(QuantPolicy::uniform(4), 2), &opt(50)).unwrap();
        assert!(accuracy(&m, &data).unwrap() >= 99.0);
        assert_eq!(trace.len(), 50 * 200usize.div_ceil(16));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = blobs(2, 40, 0.3, 1);
        let cfg = net(QuantPolicy::full_precision(), 2);
        let (m, trace) = train_original(&data, &cfg, &opt(0)).unwrap();
        let init = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(m.params, init.params);
        assert!(trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(3, 90, 0.5, 2);
        let cfg = net(QuantPolicy::uniform(4), 3);
        let a = train_original(&data, &cfg, &opt(5)).unwrap().0;
        let b = train_original(&data, &cfg, &opt(5)).unwrap().0;
        assert_eq!(a, b);
        let a = retrain(&data, &cfg, &opt(5)).unwrap().0;
        let b = retrain(&data, &cfg, &opt(5)).unwrap().0;
        assert_eq!(a, b);
    }

    struct Fixture {
        theta0: Model,
        forget: LabeledSet,
        retain: LabeledSet,
    }

    fn fixture(quant: QuantPolicy) -> Fixture {
        let data = blobs(3, 240, 1.2, 4);
        let (train, test) = train_test_split(&data, 0.25, 1).unwrap();
        let split = split_random(&train, &test, 0.1, 2).unwrap();
        let theta0 = train_original(&train, &net(quant, 3), &opt(20)).unwrap().0;
        Fixture {
            theta0,
            forget: split.forget,
            retain: split.retain,
        }
    }

    fn ucfg(method: Method, epochs: usize) -> UnlearnConfig {
        UnlearnConfig::new(
            method,
            OptConfig {
                lr: 0.05,
                cosine: false,
                batch_size: 8,
                ..opt(epochs)
            },
        )
    }

    #[test]
    fn zero_epochs_and_zero_lr_leave_theta0() {
        let fx = fixture(QuantPolicy::uniform(4));
        for m in [Method::Oeu, Method::Ga, Method::Rl, Method::Ft] {
            let (out, trace) = unlearn(&fx.theta0, &fx.forget, &fx.retain, &ucfg(m, 0)).unwrap();
            assert_eq!(out, fx.theta0);
            assert!(trace.is_empty());
        }
        let mut cfg = ucfg(Method::Ga, 2);
        cfg.opt.lr = 0.0;
        let (out, _) = run_baseline(&fx.theta0, &fx.forget, &fx.retain, &cfg).unwrap();
        assert_eq!(out, fx.theta0);
    }

    #[test]
    fn trace_has_one_record_per_step() {
        let fx = fixture(QuantPolicy::uniform(4));
        let nf = fx.forget.len();
        for m in Method::ALL.into_iter().filter(|&m| m != Method::Retrain) {
            let (_, trace) = unlearn(&fx.theta0, &fx.forget, &fx.retain, &ucfg(m, 3)).unwrap();
            assert_eq!(trace.len(), 3 * nf.div_ceil(8), "{m}");
        }
        let mut cfg = ucfg(Method::Oeu, 4);
        cfg.opt.full_batch = true;
        let (_, trace) = run_oeu(&fx.theta0, &fx.forget, &fx.retain, &cfg).unwrap();
        assert_eq!(trace.len(), 4);
    }

    #[test]
    fn oeu_raises_forget_entropy_and_keeps_grids() {
        let fx = fixture(QuantPolicy::uniform(4));
        let before = mean_entropy(&fx.theta0, fx.forget.features())
            .unwrap()
            .value;
        let (out, trace) =
            run_oeu(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Oeu, 10)).unwrap();
        let after = mean_entropy(&out, fx.forget.features()).unwrap().value;
        assert!(after > before, "{after} <= {before}");
        assert_eq!(trace.last().unwrap().forget_entropy, Some(after));
        assert_eq!(out.calibration, fx.theta0.calibration);
    }

    #[test]
    fn layerwise_projection_is_orthogonal_in_every_step() {
        let fx = fixture(QuantPolicy::uniform(4));
        let (_, trace) =
            run_oeu(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Oeu, 3)).unwrap();
        for r in &trace.records {
            for &d in &r.conflict.as_ref().unwrap().unit_projected_dots {
                assert!(d.abs() <= 1e-8, "{d}");
            }
        }
    }

    #[test]
    fn alpha_zero_matches_no_gop() {
        let fx = fixture(QuantPolicy::uniform(4));
        let mut oeu = ucfg(Method::Oeu, 3);
        oeu.projection.alpha = 0.0;
        let a = run_oeu(&fx.theta0, &fx.forget, &fx.retain, &oeu).unwrap();
        let b = run_ablation(
            &fx.theta0,
            &fx.forget,
            &fx.retain,
            &ucfg(Method::OeuNoGop, 3),
        )
        .unwrap();
        assert_eq!(a.0, b.0);
        assert!(b.1.interference_steps() > 0);
    }

    #[test]
    fn global_projection_only_orthogonal_overall() {
        let fx = fixture(QuantPolicy::full_precision());
        let (_, trace) = run_ablation(
            &fx.theta0,
            &fx.forget,
            &fx.retain,
            &ucfg(Method::OeuGlobal, 2),
        )
        .unwrap();
        let mut violated = false;
        for r in &trace.records {
            let c = r.conflict.as_ref().unwrap();
            let scale: f64 = c.unit_norm_products.iter().sum::<f64>().max(1e-300);
            assert!(
                c.projected_dot.abs() <= 1e-9 * scale.max(1.0),
                "{}",
                c.projected_dot
            );
            violated |= c.unit_projected_dots.iter().any(|d| d.abs() > 1e-4);
        }
        assert!(violated);
    }

    #[test]
    fn rl_on_two_classes_flips_predictions() {
        // Spread-out points in 8 dimensions, so single samples can be memorized.
        let data = gen_synthetic(&SyntheticSpec {
            kind: DatasetKind::Blobs,
            classes: 2,
            samples: 200,
            noise: 1.5,
            dim: 8,
            seed: 9,
        })
        .unwrap();
        let (train, test) = train_test_split(&data, 0.2, 1).unwrap();
        let split = split_random(&train, &test, 0.1, 5).unwrap();
        let cfg = NetConfig::new(vec![8, 64, 2], QuantPolicy::full_precision()).unwrap();
        let theta0 = train_original(&train, &cfg, &opt(20)).unwrap().0;
        let mut cfg = ucfg(Method::Rl, 200);
        cfg.opt.lr = 0.1;
        let (out, _) = run_baseline(&theta0, &split.forget, &split.retain, &cfg).unwrap();
        let entropy = mean_entropy(&out, split.forget.features()).unwrap().value;
        assert!(entropy < 0.3, "{entropy}");
        assert!(accuracy(&out, &split.forget).unwrap() < 50.0);
    }

    #[test]
    fn wrong_labels_are_uniform_over_other_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[wrong_label(2, 4, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        for c in [counts[0], counts[1], counts[3]] {
            assert!((c as f64 / 40_000.0 - 1.0 / 3.0).abs() < 0.01);
        }
        assert_eq!(wrong_label(0, 2, &mut rng), 1);
    }

    #[test]
    fn unlearning_is_deterministic() {
        let fx = fixture(QuantPolicy::uniform(4));
        for m in [Method::Oeu, Method::Rl, Method::OeuNoEgu] {
            let a = unlearn(&fx.theta0, &fx.forget, &fx.retain, &ucfg(m, 2))
                .unwrap()
                .0;
            let b = unlearn(&fx.theta0, &fx.forget, &fx.retain, &ucfg(m, 2))
                .unwrap()
                .0;
            assert_eq!(a, b, "{m}");
        }
    }

    #[test]
    fn wrong_entry_points_are_rejected() {
        let fx = fixture(QuantPolicy::full_precision());
        assert!(run_oeu(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Ga, 1)).is_err());
        assert!(run_baseline(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Oeu, 1)).is_err());
        assert!(run_ablation(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Rl, 1)).is_err());
        assert!(unlearn(
            &fx.theta0,
            &fx.forget,
            &fx.retain,
            &ucfg(Method::Retrain, 1)
        )
        .is_err());
    }

    #[test]
    fn divergence_carries_the_trace() {
        let fx = fixture(QuantPolicy::full_precision());
        let mut cfg = ucfg(Method::Ga, 50);
        cfg.opt.lr = 1e200;
        match run_baseline(&fx.theta0, &fx.forget, &fx.retain, &cfg) {
            Err(Error::Diverged {
                method,
                trace,
                step,
            }) => {
                assert_eq!(method, "ga");
                assert!(trace.len() <= step + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn small_projected_step_does_not_raise_forget_loss() {
        let fx = fixture(QuantPolicy::full_precision());
        let mut cfg = ucfg(Method::Oeu, 1);
        cfg.opt.full_batch = true;
        cfg.opt.lr = 1e-3;
        let before = forget_loss(&fx.theta0, fx.forget.features()).unwrap().value;
        let (out, _) = run_oeu(&fx.theta0, &fx.forget, &fx.retain, &cfg).unwrap();
        let after = forget_loss(&out, fx.forget.features()).unwrap().value;
        assert!(after <= before);
    }

    #[test]
    fn jsonl_round_trip() {
        let fx = fixture(QuantPolicy::uniform(4));
        let (_, trace) =
            run_oeu(&fx.theta0, &fx.forget, &fx.retain, &ucfg(Method::Oeu, 1)).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.len());
        assert_eq!(RunTrace::read_jsonl(&text, "oeu").unwrap(), trace);
    }
}
