//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # two moons, 10% random forgetting
//! data.kind = moons
//! data.samples = 600
//! net.hidden = 32,32
//! quant.bits = 4
//! unlearn.method = oeu
//! seeds = 0,1,2
//! ```
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys, repeated keys and bad values are rejected with their line number.
//! `method.<name>.lr`, `method.<name>.epochs` and `method.<name>.beta`
//! override the `unlearn.*` values for one method.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gop::{ProjectionConfig, ProjectionMode};
use crate::net::{NetConfig, QuantPolicy};
use crate::unlearner::{Method, OptConfig, UnlearnConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub samples: usize,
    pub noise: f64,
    pub dim: usize,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Random,
    Classwise,
}

/// `ratio` applies to random forgetting, `class` to class-wise forgetting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub scenario: ScenarioKind,
    pub ratio: f64,
    pub class: usize,
}

impl SplitConfig {
    pub fn random(ratio: f64) -> Self {
        Self {
            scenario: ScenarioKind::Random,
            ratio,
            class: 0,
        }
    }

    pub fn classwise(class: usize) -> Self {
        Self {
            scenario: ScenarioKind::Classwise,
            ratio: 0.1,
            class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodOverride {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub hidden: Vec<usize>,
    pub quant: QuantPolicy,
    pub train: OptConfig,
    pub unlearn: UnlearnConfig,
    pub overrides: BTreeMap<Method, MethodOverride>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                kind: DatasetKind::Moons,
                classes: 2,
                samples: 600,
                noise: 0.15,
                dim: 2,
                test_fraction: 0.25,
            },
            split: SplitConfig::random(0.1),
            hidden: vec![32, 32],
            quant: QuantPolicy::uniform(4),
            train: OptConfig {
                epochs: 60,
                lr: 0.1,
                cosine: true,
                batch_size: 32,
                full_batch: false,
                seed: 0,
            },
            unlearn: UnlearnConfig {
                method: Method::Oeu,
                opt: OptConfig {
                    epochs: 10,
                    lr: 0.05,
                    cosine: true,
                    batch_size: 16,
                    full_batch: false,
                    seed: 0,
                },
                beta: 1.0,
                projection: ProjectionConfig::default(),
            },
            overrides: BTreeMap::new(),
            seeds: vec![0],
            out: PathBuf::from("runs"),
        }
    }
}

/// Independent stream for `purpose` under one experiment seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(purpose.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn bits_str(b: Option<u32>) -> String {
    b.map_or_else(|| "off".to_string(), |b| b.to_string())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_bits(key: &str, v: &str) -> Result<Option<u32>> {
    match v {
        "off" | "none" | "0" => Ok(None),
        _ => parse_num(key, v).map(Some),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line_no}: expected `key = value`"
                )));
            };
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(Error::Config(format!(
                    "line {line_no}: {key} already set on line {prev}"
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {line_no}: {}", strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Sets one dotted key. Does not re-validate the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let u = &mut self.unlearn;
        match key {
            "data.kind" => self.data.kind = v.parse()?,
            "data.classes" => self.data.classes = parse_num(key, v)?,
            "data.samples" => self.data.samples = parse_num(key, v)?,
            "data.noise" => self.data.noise = parse_num(key, v)?,
            "data.dim" => self.data.dim = parse_num(key, v)?,
            "data.test_fraction" => self.data.test_fraction = parse_num(key, v)?,
            "split.scenario" => {
                self.split.scenario = match v {
                    "random" => ScenarioKind::Random,
                    "classwise" => ScenarioKind::Classwise,
                    _ => {
                        return Err(Error::Config(format!(
                            "split.scenario: expected random or classwise, got {v:?}"
                        )))
                    }
                }
            }
            "split.ratio" => self.split.ratio = parse_num(key, v)?,
            "split.class" => self.split.class = parse_num(key, v)?,
            "net.hidden" => self.hidden = parse_list(key, v)?,
            "quant.bits" => {
                let b = parse_bits(key, v)?;
                self.quant = QuantPolicy {
                    weight_bits: b,
                    activation_bits: b,
                };
            }
            "quant.weight_bits" => self.quant.weight_bits = parse_bits(key, v)?,
            "quant.activation_bits" => self.quant.activation_bits = parse_bits(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.lr" => self.train.lr = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.cosine" => self.train.cosine = parse_bool(key, v)?,
            "train.full_batch" => self.train.full_batch = parse_bool(key, v)?,
            "unlearn.method" => u.method = v.parse()?,
            "unlearn.epochs" => u.opt.epochs = parse_num(key, v)?,
            "unlearn.lr" => u.opt.lr = parse_num(key, v)?,
            "unlearn.batch_size" => u.opt.batch_size = parse_num(key, v)?,
            "unlearn.cosine" => u.opt.cosine = parse_bool(key, v)?,
            "unlearn.full_batch" => u.opt.full_batch = parse_bool(key, v)?,
            "unlearn.beta" => u.beta = parse_num(key, v)?,
            "unlearn.alpha" => u.projection.alpha = parse_num(key, v)?,
            "unlearn.epsilon" => u.projection.epsilon = parse_num(key, v)?,
            "unlearn.projection" => u.projection.mode = v.parse::<ProjectionMode>()?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => {
                let parts: Vec<&str> = key.split('.').collect();
                match parts.as_slice() {
                    ["method", name, field] => {
                        let method: Method = name.parse()?;
                        let o = self.overrides.entry(method).or_default();
                        match *field {
                            "lr" => o.lr = Some(parse_num(key, v)?),
                            "epochs" => o.epochs = Some(parse_num(key, v)?),
                            "beta" => o.beta = Some(parse_num(key, v)?),
                            _ => return Err(Error::Config(format!("unknown key {key}"))),
                        }
                    }
                    _ => return Err(Error::Config(format!("unknown key {key}"))),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 || d.samples < d.classes || d.dim == 0 {
            return Err(Error::Config(
                "data needs classes >= 2, samples >= classes and dim >= 1".into(),
            ));
        }
        if d.kind == DatasetKind::Moons && d.classes != 2 {
            return Err(Error::Config(
                "data.kind = moons requires data.classes = 2".into(),
            ));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::Config(
                "data.test_fraction must lie in (0, 1)".into(),
            ));
        }
        let sp = self.split;
        match sp.scenario {
            ScenarioKind::Random if !(sp.ratio > 0.0 && sp.ratio < 1.0) => {
                return Err(Error::Config("split.ratio must lie in (0, 1)".into()))
            }
            ScenarioKind::Classwise if sp.class >= d.classes => {
                return Err(Error::Config(format!(
                    "split.class {} is not below data.classes {}",
                    sp.class, d.classes
                )))
            }
            _ => {}
        }
        self.net_config()?;
        self.train.validate()?;
        for m in Method::ALL {
            if m != Method::Retrain {
                self.unlearn_config(m, 0).validate()?;
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let mut widths = vec![self.data.dim];
        widths.extend(&self.hidden);
        widths.push(self.data.classes);
        NetConfig::new(widths, self.quant)
    }

    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.data.kind,
            classes: self.data.classes,
            samples: self.data.samples,
            noise: self.data.noise,
            dim: self.data.dim,
            seed: derive_seed(seed, "data"),
        }
    }

    pub fn train_opt(&self, seed: u64) -> OptConfig {
        OptConfig {
            seed: derive_seed(seed, "train"),
            ..self.train
        }
    }

    pub fn retrain_opt(&self, seed: u64) -> OptConfig {
        OptConfig {
            seed: derive_seed(seed, "retrain"),
            ..self.train
        }
    }

    /// The unlearning config for `method`, with its overrides applied.
    pub fn unlearn_config(&self, method: Method, seed: u64) -> UnlearnConfig {
        let mut u = self.unlearn;
        u.method = method;
        u.opt.seed = derive_seed(seed, "unlearn");
        if let Some(o) = self.overrides.get(&method) {
            u.opt.lr = o.lr.unwrap_or(u.opt.lr);
            u.opt.epochs = o.epochs.unwrap_or(u.opt.epochs);
            u.beta = o.beta.unwrap_or(u.beta);
        }
        u
    }

    /// Every effective setting as sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        let d = &self.data;
        put("data.kind", d.kind.to_string());
        put("data.classes", d.classes.to_string());
        put("data.samples", d.samples.to_string());
        put("data.noise", d.noise.to_string());
        put("data.dim", d.dim.to_string());
        put("data.test_fraction", d.test_fraction.to_string());
        match self.split.scenario {
            ScenarioKind::Random => {
                put("split.scenario", "random".into());
                put("split.ratio", self.split.ratio.to_string());
            }
            ScenarioKind::Classwise => {
                put("split.scenario", "classwise".into());
                put("split.class", self.split.class.to_string());
            }
        }
        put("net.hidden", list(&self.hidden));
        put("quant.weight_bits", bits_str(self.quant.weight_bits));
        put(
            "quant.activation_bits",
            bits_str(self.quant.activation_bits),
        );
        let t = &self.train;
        put("train.epochs", t.epochs.to_string());
        put("train.lr", t.lr.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.cosine", t.cosine.to_string());
        put("train.full_batch", t.full_batch.to_string());
        let u = &self.unlearn;
        put("unlearn.method", u.method.to_string());
        put("unlearn.epochs", u.opt.epochs.to_string());
        put("unlearn.lr", u.opt.lr.to_string());
        put("unlearn.batch_size", u.opt.batch_size.to_string());
        put("unlearn.cosine", u.opt.cosine.to_string());
        put("unlearn.full_batch", u.opt.full_batch.to_string());
        put("unlearn.beta", u.beta.to_string());
        put("unlearn.alpha", u.projection.alpha.to_string());
        put("unlearn.epsilon", u.projection.epsilon.to_string());
        put(
            "unlearn.projection",
            match u.projection.mode {
                ProjectionMode::Global => "global".into(),
                ProjectionMode::Layerwise => "layerwise".into(),
            },
        );
        for (m, o) in &self.overrides {
            if let Some(lr) = o.lr {
                put(&format!("method.{m}.lr"), lr.to_string());
            }
            if let Some(e) = o.epochs {
                put(&format!("method.{m}.epochs"), e.to_string());
            }
            if let Some(b) = o.beta {
                put(&format!("method.{m}.beta"), b.to_string());
            }
        }
        put("seeds", list(&self.seeds));
        put("out", self.out.display().to_string());
        kv.into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    fn hash_prefixes(&self, prefixes: &[&str]) -> String {
        let mut h = Sha256::new();
        for line in self.canonical().lines() {
            if prefixes.iter().any(|p| line.starts_with(p)) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        hex(&h.finalize())
    }

    /// SHA-256 of the canonical settings, excluding `seeds` and `out`.
    pub fn hash(&self) -> String {
        self.hash_prefixes(&[
            "data.", "split.", "net.", "quant.", "train.", "unlearn.", "method.",
        ])
    }

    /// Hash of everything the retrained reference depends on.
    pub fn retrain_key(&self, seed: u64) -> String {
        let base = self.hash_prefixes(&["data.", "split.", "net.", "quant.", "train."]);
        hex(&Sha256::new()
            .chain_update(base.as_bytes())
            .chain_update(seed.to_le_bytes())
            .finalize())
    }
}

/// Drops the "invalid configuration: " prefix when re-wrapping.
fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let cfg = ExperimentConfig::parse(
            "data.kind = blobs\ndata.classes = 8\nsplit.scenario = classwise\nsplit.class = 3\n\
             net.hidden = 16\nquant.weight_bits = 8\nquant.activation_bits = off\n\
             unlearn.alpha = 0.5 # trailing comment\nmethod.ga.lr = 0.01\nseeds = 1, 2,3\n",
        )
        .unwrap();
        assert_eq!(cfg.data.kind, DatasetKind::Blobs);
        assert_eq!(cfg.split.scenario, ScenarioKind::Classwise);
        assert_eq!(cfg.split.class, 3);
        assert_eq!(cfg.net_config().unwrap().widths, vec![2, 16, 8]);
        assert_eq!(cfg.quant, QuantPolicy::weights_only(8));
        assert_eq!(cfg.unlearn.projection.alpha, 0.5);
        assert_eq!(cfg.unlearn_config(Method::Ga, 0).opt.lr, 0.01);
        assert_eq!(cfg.unlearn_config(Method::Rl, 0).opt.lr, 0.05);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, needle) in [
            ("data.kind = moons\nbogus.key = 1\n", "line 2"),
            ("unlearn.lr = fast\n", "line 1"),
            ("data.samples 10\n", "line 1"),
            ("seeds = 1\nseeds = 2\n", "line 2"),
            ("unlearn.method = sgd\n", "valid methods"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
        assert!(ExperimentConfig::parse("seeds =\n").is_err());
        assert!(ExperimentConfig::parse("data.kind = moons\ndata.classes = 3\n").is_err());
        assert!(ExperimentConfig::parse("unlearn.alpha = 2\n").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let cfg =
            ExperimentConfig::parse("data.kind = rings\ndata.classes = 3\nmethod.rl.epochs = 4\n")
                .unwrap();
        let again = ExperimentConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn hash_ignores_seeds_and_output() {
        let a = ExperimentConfig::parse("seeds = 1\nout = a\n").unwrap();
        let b = ExperimentConfig::parse("seeds = 2,3\nout = b\n").unwrap();
        let c = ExperimentConfig::parse("unlearn.beta = 0.5\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
        // Unlearning settings do not affect the reference model.
        assert_eq!(a.retrain_key(0), c.retrain_key(0));
        assert_ne!(a.retrain_key(0), a.retrain_key(1));
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(0, "data"), derive_seed(0, "train"));
        assert_ne!(derive_seed(0, "data"), derive_seed(1, "data"));
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }
}
