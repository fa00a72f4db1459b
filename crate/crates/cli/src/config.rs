//! Run configuration: defaults, a flat `key = value` file, then command-line
//! flags, each layer overriding the one before. Keys are the long flag names.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sscgan::{AdvForm, Conditioning, LossConfig, ModelConfig, SplitSpec, SplitUnit, TrainPlan};
use thiserror::Error;

/// The full-protocol configuration: ω ∈ {1, 2, 4}, 200 epochs, batch 128,
/// lr 2e-4 held for 100 epochs then decayed linearly to zero.
pub const PAPER_REPRO: &str = include_str!("../configs/paper-repro.conf");

/// Named configurations accepted by `--config` in place of a path.
pub const BUILTIN_CONFIGS: [(&str, &str); 1] = [("paper-repro", PAPER_REPRO)];

pub const DEFAULT_OUT: &str = "runs";
pub const DEFAULT_SYNTH_PER_CLASS: usize = 500;

/// `--data` value that selects a generated synthetic dataset.
pub const SYNTH_DATA: &str = "synth";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key {key:?}")]
    UnknownKey { key: String, origin: String },
    #[error("{origin}: invalid value {value:?} for {key}: {msg}")]
    BadValue {
        key: String,
        value: String,
        origin: String,
        msg: String,
    },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("--omega is required (it names the experiment, e.g. 1 or 1,2,4)")]
    MissingOmega,
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    File,
    Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset root, or `synth` for the generated stand-in.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// One training run per entry.
    pub omegas: Vec<usize>,
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub loss: LossConfig,
    pub split: SplitSpec,
    pub synth_per_class: usize,
    /// Keys set by a file or a flag rather than left at their default.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from(DEFAULT_OUT),
            omegas: Vec::new(),
            model: ModelConfig::default(),
            plan: TrainPlan::default(),
            loss: LossConfig::default(),
            split: SplitSpec::default(),
            synth_per_class: DEFAULT_SYNTH_PER_CLASS,
            explicit: BTreeSet::new(),
        }
    }
}

pub const KEYS: [&str; 22] = [
    "data",
    "out",
    "omega",
    "epochs",
    "batch",
    "lr",
    "decay-start",
    "seed",
    "split-unit",
    "split-seed",
    "test-fraction",
    "conditioning",
    "lambda-gp",
    "lambda-cls",
    "adv-form",
    "classify-fakes",
    "latent-dim",
    "leaky-slope",
    "base-filters",
    "sample-every",
    "checkpoint-every",
    "synth-per-class",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str, origin: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        origin: origin.into(),
        msg: e.to_string(),
    })
}

fn parse_bool(key: &str, value: &str, origin: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            origin: origin.into(),
            msg: "expected true or false".into(),
        }),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str, path: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: path.into(),
            line: i + 1,
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Reads a config file, or a builtin one by name.
pub fn load_config_text(name: &Path) -> Result<(String, String), ConfigError> {
    let label = name.display().to_string();
    if let Some((_, text)) = BUILTIN_CONFIGS.iter().find(|(n, _)| *n == label) {
        return Ok((label, text.to_string()));
    }
    let text = std::fs::read_to_string(name).map_err(|source| ConfigError::Io {
        path: name.to_path_buf(),
        source,
    })?;
    Ok((label, text))
}

impl RunConfig {
    /// Applies one setting. `origin` only feeds error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            origin: origin.into(),
            msg,
        };
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "omega" => {
                let omegas = value
                    .split(',')
                    .map(|s| parse_num::<usize>(key, s.trim(), origin))
                    .collect::<Result<Vec<_>, _>>()?;
                if omegas.is_empty() || omegas.contains(&0) {
                    return Err(bad("width multipliers must be positive".into()));
                }
                self.omegas = omegas;
            }
            "epochs" => self.plan.epochs = parse_num(key, value, origin)?,
            "batch" => self.plan.batch = parse_num(key, value, origin)?,
            "lr" => self.plan.lr0 = parse_num(key, value, origin)?,
            "decay-start" => self.plan.decay_start = parse_num(key, value, origin)?,
            "seed" => self.plan.seed = parse_num(key, value, origin)?,
            "split-unit" => {
                self.split.unit = SplitUnit::parse(value).map_err(|e| bad(e.to_string()))?
            }
            "split-seed" => self.split.seed = parse_num(key, value, origin)?,
            "test-fraction" => self.split.test_fraction = parse_num(key, value, origin)?,
            "conditioning" => {
                self.model.conditioning =
                    Conditioning::parse(value).map_err(|e| bad(e.to_string()))?
            }
            "lambda-gp" => self.loss.lambda_gp = parse_num(key, value, origin)?,
            "lambda-cls" => self.loss.lambda_cls = parse_num(key, value, origin)?,
            "adv-form" => {
                self.loss.adv_form = AdvForm::parse(value).map_err(|e| bad(e.to_string()))?
            }
            "classify-fakes" => self.loss.classify_fakes = parse_bool(key, value, origin)?,
            "latent-dim" => self.model.latent_dim = parse_num(key, value, origin)?,
            "leaky-slope" => self.model.leaky_slope = parse_num(key, value, origin)?,
            "base-filters" => self.model.base_filters = parse_num(key, value, origin)?,
            "sample-every" => self.plan.sample_every = parse_num(key, value, origin)?,
            "checkpoint-every" => self.plan.checkpoint_every = parse_num(key, value, origin)?,
            "synth-per-class" => self.synth_per_class = parse_num(key, value, origin)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.into(),
                    origin: origin.into(),
                })
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Defaults, then `file` (label and text), then `flags`.
    pub fn resolve(
        file: Option<(&str, &str)>,
        flags: &[(&str, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some((label, text)) = file {
            for (k, v) in parse_pairs(text, label)? {
                cfg.set(&k, &v, label)?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v, &format!("--{k}"))?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Fills settings that default relative to others and validates.
    fn finish(&mut self) -> Result<(), ConfigError> {
        if !self.is_set("decay-start") {
            self.plan.decay_start = self.plan.epochs / 2;
        }
        if !self.is_set("split-seed") {
            self.split.seed = self.plan.seed;
        }
        self.plan
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for &omega in &self.omegas {
            self.model_for(omega)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn require_omegas(&self) -> Result<&[usize], ConfigError> {
        if self.omegas.is_empty() {
            return Err(ConfigError::MissingOmega);
        }
        Ok(&self.omegas)
    }

    pub fn model_for(&self, omega: usize) -> ModelConfig {
        ModelConfig {
            omega,
            ..self.model.clone()
        }
    }

    /// The resolved settings in the same format the loader reads.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        if let Some(d) = &self.data {
            lines.push(format!("data = {}", d.display()));
        }
        lines.push(format!("out = {}", self.out.display()));
        if !self.omegas.is_empty() {
            let list: Vec<String> = self.omegas.iter().map(|o| o.to_string()).collect();
            lines.push(format!("omega = {}", list.join(",")));
        }
        let pairs: [(&str, String); 19] = [
            ("epochs", self.plan.epochs.to_string()),
            ("batch", self.plan.batch.to_string()),
            ("lr", self.plan.lr0.to_string()),
            ("decay-start", self.plan.decay_start.to_string()),
            ("seed", self.plan.seed.to_string()),
            ("split-unit", self.split.unit.as_str().to_string()),
            ("split-seed", self.split.seed.to_string()),
            ("test-fraction", self.split.test_fraction.to_string()),
            ("conditioning", self.model.conditioning.as_str().to_string()),
            ("lambda-gp", self.loss.lambda_gp.to_string()),
            ("lambda-cls", self.loss.lambda_cls.to_string()),
            ("adv-form", self.loss.adv_form.as_str().to_string()),
            ("classify-fakes", self.loss.classify_fakes.to_string()),
            ("latent-dim", self.model.latent_dim.to_string()),
            ("leaky-slope", self.model.leaky_slope.to_string()),
            ("base-filters", self.model.base_filters.to_string()),
            ("sample-every", self.plan.sample_every.to_string()),
            ("checkpoint-every", self.plan.checkpoint_every.to_string()),
            ("synth-per-class", self.synth_per_class.to_string()),
        ];
        lines.extend(pairs.iter().map(|(k, v)| format!("{k} = {v}")));
        lines.join("\n") + "\n"
    }
}
