//! Flat `key = value` configuration files with dotted section keys.
//!
//! ```text
//! # mnist_gce.cfg
//! model.arch = lenet5
//! loss.kind = gce
//! loss.alpha = 0.3333333333333333
//! opt.kind = adam
//! opt.lr = 0.001
//! train.epochs = 10
//! train.batch_size = 128
//! train.seed = 42
//! ```
//!
//! Flags override file values; the fully resolved config is echoed into
//! the run directory, and its hash names the run.

use crate::error::{Error, Result};
use crate::losses::GceConfig;
use crate::models::ModelSpec;
use crate::training::{
    AdversarialSection, LossKind, LrSchedule, OptimizerConfig, OptimizerKind, TrainConfig,
};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("missing key `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Format(format!("key `{key}`: cannot parse `{value}`")))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.parsed(key, self.require(key)?)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => self.parsed(key, v),
            None => Ok(default),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => self.parsed(key, v),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(v) => self.parsed(key, v),
            None => Ok(default),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some(v) => self.parsed(key, v),
            None => Ok(default),
        }
    }

    /// Comma-separated list; empty value means empty list.
    pub fn list_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.get(key) {
            Some(v) if v.trim().is_empty() => Vec::new(),
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
            None => default.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Sorted `key = value` lines; the canonical serialization.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Short hex digest of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything a `train` invocation needs, decoded from one config.
#[derive(Debug)]
pub struct ResolvedTrain {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Data root directory (containing `mnist/`).
    pub data_dir: String,
    /// Stratified training-subset size; 0 keeps the full set.
    pub train_subset: usize,
}

pub fn resolve_train(cfg: &Config) -> Result<ResolvedTrain> {
    let spec = match cfg.require("model.arch")? {
        "lenet5" => ModelSpec::lenet5(),
        "mlp" => {
            let widths: Vec<usize> = cfg
                .list_or("model.widths", &[])
                .iter()
                .map(|w| {
                    w.parse()
                        .map_err(|_| Error::Format(format!("model.widths: bad entry `{w}`")))
                })
                .collect::<Result<_>>()?;
            let input = *widths.first().ok_or_else(|| {
                Error::Format("model.widths required for mlp".into())
            })?;
            let input_shape = match cfg.get("model.input_shape") {
                Some(raw) => {
                    let dims: Vec<usize> = raw
                        .split(',')
                        .map(|d| {
                            d.trim().parse().map_err(|_| {
                                Error::Format(format!("model.input_shape: bad entry `{d}`"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    match dims[..] {
                        [c, h, w] => [c, h, w],
                        _ => {
                            return Err(Error::Format(
                                "model.input_shape must be `channels,height,width`".into(),
                            ))
                        }
                    }
                }
                // The common case: a flattened MNIST image.
                None if input == 784 => [1, 28, 28],
                None => [1, 1, input],
            };
            ModelSpec::mlp(input_shape, widths)?
        }
        other => {
            return Err(Error::Format(format!(
                "model.arch: unsupported architecture `{other}`"
            )))
        }
    };

    let loss = LossKind::parse(cfg.require("loss.kind")?)?;
    let alpha = cfg.f64_or("loss.alpha", 1.0 / 3.0)?;
    let normalized = cfg.bool_or("loss.normalized", true)?;
    let mut gce = GceConfig::new(alpha, normalized)?;
    if let Some(floor) = cfg.get("loss.prob_floor") {
        gce = gce.with_prob_floor(cfg.parsed("loss.prob_floor", floor)?)?;
    }

    let kind = match cfg.require("opt.kind")? {
        "adam" => OptimizerKind::Adam,
        "sgd_momentum" => OptimizerKind::SgdMomentum,
        other => return Err(Error::Format(format!("opt.kind: unknown optimizer `{other}`"))),
    };
    let optimizer = OptimizerConfig {
        kind,
        momentum: cfg.f64_or("opt.momentum", 0.9)?,
        weight_decay: cfg.f64_or("opt.weight_decay", 0.0)?,
        beta1: cfg.f64_or("opt.beta1", 0.9)?,
        beta2: cfg.f64_or("opt.beta2", 0.999)?,
        epsilon: cfg.f64_or("opt.epsilon", 1e-8)?,
    };

    let decay_epochs = cfg
        .list_or("lr.decay_epochs", &[])
        .iter()
        .map(|e| {
            e.parse()
                .map_err(|_| Error::Format(format!("lr.decay_epochs: bad entry `{e}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let schedule = LrSchedule {
        initial: cfg.require_f64("opt.lr")?,
        decay_factor: cfg.f64_or("lr.decay_factor", 1.0)?,
        decay_epochs,
    };

    let train = TrainConfig {
        loss,
        gce,
        cot_normalize_complement: cfg.bool_or("loss.cot_normalize_complement", false)?,
        optimizer,
        epochs: cfg.usize_or("train.epochs", 10)?,
        batch_size: cfg.usize_or("train.batch_size", 128)?,
        schedule,
        seed: cfg.u64_or("train.seed", 42)?,
        adversarial: AdversarialSection {
            enabled: cfg.bool_or("adv.enabled", false)?,
            epsilon: cfg.f64_or("adv.epsilon", 0.3)?,
            iterations: cfg.usize_or("adv.iterations", 10)?,
        },
    };
    train.validate()?;

    Ok(ResolvedTrain {
        spec,
        train,
        data_dir: cfg.get("data.dir").unwrap_or("data").to_string(),
        train_subset: cfg.usize_or("data.train_subset", 0)?,
    })
}
