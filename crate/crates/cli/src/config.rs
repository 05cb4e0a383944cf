//! Run configuration in a flat, versioned `key = value` text format.
//!
//! ```text
//! version = 1
//! dataset = mnist
//! mnist_dir = data/mnist
//! latent = 40
//! flow_length = 10
//! # comments and blank lines are ignored
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hfvae::data::Split;
use hfvae::distributions::LikelihoodKind;
use hfvae::optim::LR_GRID;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    Patches,
}

impl Dataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Patches => "patches",
        }
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "patches" => Ok(Dataset::Patches),
            other => Err(format!("unknown dataset `{other}` (expected mnist or patches)")),
        }
    }
}

/// Either a fixed learning rate or a grid searched by short probe runs.
#[derive(Clone, Debug, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    Grid(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Dataset,
    /// Directory with the four standard MNIST IDX files (optionally gzipped).
    pub mnist_dir: PathBuf,
    /// Training images carved off for validation.
    pub validation_size: usize,
    /// Keep only this many training images (0 = all).
    pub train_limit: usize,
    /// Directory of `<patientid>_<index>.png|pgm` images.
    pub patch_dir: PathBuf,
    /// Patient to split assignment for the patch corpus.
    pub patients: Vec<(String, Split)>,
    /// Where prepared splits are cached (empty = no cache).
    pub cache_dir: PathBuf,
    pub latent: usize,
    pub hidden: usize,
    pub flow_length: usize,
    pub likelihood: LikelihoodKind,
    pub lr: LearningRate,
    /// Epochs per learning-rate probe.
    pub probe_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub lookahead: usize,
    /// Monte Carlo samples per datum for validation scoring.
    pub eval_samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write wall-clock seconds into metric records. Off by default so that
    /// metrics files are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: Dataset::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            validation_size: 10_000,
            train_limit: 0,
            patch_dir: PathBuf::from("data/patches"),
            patients: Vec::new(),
            cache_dir: PathBuf::new(),
            latent: 40,
            hidden: 300,
            flow_length: 0,
            likelihood: LikelihoodKind::Bernoulli,
            lr: LearningRate::Grid(LR_GRID.to_vec()),
            probe_epochs: 5,
            batch_size: 100,
            max_epochs: 5000,
            warmup_epochs: 200,
            lookahead: 100,
            eval_samples: 1,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            record_wall_time: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{value}`")),
    }
}

fn parse_patients(value: &str) -> Result<Vec<(String, Split)>, String> {
    value
        .split_whitespace()
        .map(|item| {
            let (id, split) = item
                .split_once(':')
                .ok_or_else(|| format!("patients: expected id:split, got `{item}`"))?;
            Ok((id.to_string(), split.parse::<Split>().map_err(|e| e.to_string())?))
        })
        .collect()
}

impl RunConfig {
    /// Sets one key; CLI overrides go through here too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "version" => {
                let v: u32 = parse_num(key, value)?;
                if v != CONFIG_VERSION {
                    return Err(format!("unsupported config version {v} (expected {CONFIG_VERSION})"));
                }
            }
            "dataset" => self.dataset = value.parse()?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(value),
            "validation_size" => self.validation_size = parse_num(key, value)?,
            "train_limit" => self.train_limit = parse_num(key, value)?,
            "patch_dir" => self.patch_dir = PathBuf::from(value),
            "patients" => self.patients = parse_patients(value)?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "latent" => self.latent = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "flow_length" | "T" => self.flow_length = parse_num(key, value)?,
            "likelihood" => self.likelihood = value.parse().map_err(|e: hfvae::Error| e.to_string())?,
            "lr" => {
                self.lr = if value == "grid" {
                    LearningRate::Grid(LR_GRID.to_vec())
                } else {
                    LearningRate::Fixed(parse_num(key, value)?)
                }
            }
            "lr_grid" => {
                self.lr = LearningRate::Grid(value.split_whitespace().map(|v| parse_num(key, v)).collect::<Result<_, _>>()?)
            }
            "probe_epochs" => self.probe_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse_num(key, value)?,
            "lookahead" => self.lookahead = parse_num(key, value)?,
            "eval_samples" => self.eval_samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "record_wall_time" => self.record_wall_time = parse_bool(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut saw_version = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "version" {
                let v: u32 = value.parse().map_err(|_| ConfigError::Parse {
                    line: i + 1,
                    message: format!("bad version `{value}`"),
                })?;
                if v != CONFIG_VERSION {
                    return Err(ConfigError::Version(v));
                }
                saw_version = true;
                continue;
            }
            cfg.set(key, value).map_err(|message| ConfigError::Parse { line: i + 1, message })?;
        }
        if !saw_version {
            return Err(ConfigError::Parse {
                line: 1,
                message: "missing `version` key".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("version", CONFIG_VERSION.to_string());
        kv("dataset", self.dataset.as_str().into());
        kv("mnist_dir", self.mnist_dir.display().to_string());
        kv("validation_size", self.validation_size.to_string());
        kv("train_limit", self.train_limit.to_string());
        kv("patch_dir", self.patch_dir.display().to_string());
        kv(
            "patients",
            self.patients.iter().map(|(id, s)| format!("{id}:{s}")).collect::<Vec<_>>().join(" "),
        );
        kv("cache_dir", self.cache_dir.display().to_string());
        kv("latent", self.latent.to_string());
        kv("hidden", self.hidden.to_string());
        kv("flow_length", self.flow_length.to_string());
        kv("likelihood", self.likelihood.as_str().into());
        match &self.lr {
            LearningRate::Fixed(lr) => kv("lr", format!("{lr:?}")),
            LearningRate::Grid(g) => kv("lr_grid", g.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")),
        }
        kv("probe_epochs", self.probe_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("lookahead", self.lookahead.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("latent", self.latent),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("lookahead", self.lookahead),
            ("eval_samples", self.eval_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        match &self.lr {
            LearningRate::Fixed(lr) if !(lr.is_finite() && *lr > 0.0) => {
                return Err(ConfigError::Invalid(format!("lr must be positive, got {lr}")))
            }
            LearningRate::Grid(g) if g.is_empty() || g.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) => {
                return Err(ConfigError::Invalid("lr_grid must hold positive rates".into()))
            }
            LearningRate::Grid(_) if self.probe_epochs == 0 => {
                return Err(ConfigError::Invalid("probe_epochs must be positive with an lr grid".into()))
            }
            _ => {}
        }
        if self.dataset == Dataset::Mnist && self.validation_size == 0 {
            return Err(ConfigError::Invalid("validation_size must be positive".into()));
        }
        if self.dataset == Dataset::Patches && self.patients.is_empty() {
            return Err(ConfigError::Invalid("patch dataset needs a `patients` assignment".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn full_round_trip() {
        let cfg = RunConfig {
            dataset: Dataset::Patches,
            patients: vec![("p1".into(), Split::Train), ("p2".into(), Split::Validation), ("p3".into(), Split::Test)],
            likelihood: LikelihoodKind::BoundedGaussian,
            lr: LearningRate::Fixed(3e-4),
            flow_length: 10,
            seed: u64::MAX,
            record_wall_time: true,
            ..RunConfig::default()
        };
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("latent = 3"), Err(ConfigError::Parse { .. })));
        assert!(matches!(RunConfig::parse("version = 2"), Err(ConfigError::Version(2))));
        assert!(matches!(RunConfig::parse("version = 1\nbogus = 1"), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::parse("version = 1\nlatent = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("version = 1\nlr = -1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("version = 1\ndataset = patches"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg = RunConfig::parse("version = 1\n# note\n\nflow_length = 3\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.flow_length, 3);
        assert_eq!(cfg.lr, LearningRate::Fixed(0.001));
        cfg.set("T", "7").unwrap();
        assert_eq!(cfg.flow_length, 7);
    }
}
