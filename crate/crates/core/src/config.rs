//! Run configuration as flat `key=value` text.
//!
//! Recognised keys, defaults in brackets:
//!
//! ```text
//! vocab            vocabulary file                 [built-in QM9]
//! train            training dataset                []
//! test             test dataset                    []
//! latent_dim       [100]    hidden_dim       [100]
//! encoder_steps    [12]     decoder_steps    [12]
//! edge_hidden      [250]    property_hidden  [250]
//! lambda_latent    [0.3]    lambda_opt       [10]
//! epochs           [10]     batch_size       [32]
//! seed             [0]
//! lr [0.001]  beta1 [0.9]  beta2 [0.999]  eps [1e-8]
//! max_grad_norm    [0 = off]
//! encodings        [20]     recon_cap        [5000]   samples [20000]
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::AdamConfig;
use crate::model::ModelConfig;
use crate::training::{LossWeights, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: invalid value `{value}`")]
    Value { key: String, value: String },
    #[error("`{key}`: {message}")]
    Range { key: String, message: String },
    #[error("`{key}`: file {path} does not exist")]
    MissingFile { key: String, path: PathBuf },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub vocab: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub max_grad_norm: f64,
    pub encodings: usize,
    pub recon_cap: usize,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocab: None,
            train: None,
            test: None,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            epochs: 10,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            max_grad_norm: 0.0,
            encodings: 20,
            recon_cap: 5000,
            samples: 20000,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
    })
}

impl RunConfig {
    pub const KEYS: [&'static str; 22] = [
        "vocab",
        "train",
        "test",
        "latent_dim",
        "hidden_dim",
        "encoder_steps",
        "decoder_steps",
        "edge_hidden",
        "property_hidden",
        "lambda_latent",
        "lambda_opt",
        "epochs",
        "batch_size",
        "seed",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "max_grad_norm",
        "encodings",
        "recon_cap",
        "samples",
    ];

    /// Applies one setting; used for file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "vocab" => self.vocab = Some(value.into()),
            "train" => self.train = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "latent_dim" => self.model.latent_dim = parse_num(key, value)?,
            "hidden_dim" => self.model.hidden_dim = parse_num(key, value)?,
            "encoder_steps" => self.model.encoder_steps = parse_num(key, value)?,
            "decoder_steps" => self.model.decoder_steps = parse_num(key, value)?,
            "edge_hidden" => self.model.edge_hidden = parse_num(key, value)?,
            "property_hidden" => self.model.property_hidden = parse_num(key, value)?,
            "lambda_latent" => self.weights.latent = parse_num(key, value)?,
            "lambda_opt" => self.weights.opt = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "lr" => self.adam.lr = parse_num(key, value)?,
            "beta1" => self.adam.beta1 = parse_num(key, value)?,
            "beta2" => self.adam.beta2 = parse_num(key, value)?,
            "eps" => self.adam.eps = parse_num(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse_num(key, value)?,
            "encodings" => self.encodings = parse_num(key, value)?,
            "recon_cap" => self.recon_cap = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parses over the defaults. Relative paths stay as written.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; relative paths inside are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.vocab, &mut cfg.train, &mut cfg.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("latent_dim", self.model.latent_dim),
            ("hidden_dim", self.model.hidden_dim),
            ("edge_hidden", self.model.edge_hidden),
            ("property_hidden", self.model.property_hidden),
            ("batch_size", self.batch_size),
            ("encodings", self.encodings),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::Range {
                    key: key.into(),
                    message: "must be positive".into(),
                });
            }
        }
        let checks = [
            ("lambda_latent", self.weights.latent >= 0.0 && self.weights.latent.is_finite()),
            ("lambda_opt", self.weights.opt >= 0.0 && self.weights.opt.is_finite()),
            ("lr", self.adam.lr > 0.0 && self.adam.lr.is_finite()),
            ("beta1", (0.0..1.0).contains(&self.adam.beta1)),
            ("beta2", (0.0..1.0).contains(&self.adam.beta2)),
            ("eps", self.adam.eps > 0.0),
            ("max_grad_norm", self.max_grad_norm >= 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(ConfigError::Range {
                    key: key.into(),
                    message: "out of range".into(),
                });
            }
        }
        Ok(())
    }

    /// Fails if a configured file is absent.
    pub fn check_files(&self) -> Result<(), ConfigError> {
        for (key, p) in [("vocab", &self.vocab), ("train", &self.train), ("test", &self.test)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingFile {
                        key: key.into(),
                        path: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            weights: self.weights,
            adam: self.adam,
            seed: self.seed,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, p) in [("vocab", &self.vocab), ("train", &self.train), ("test", &self.test)] {
            if let Some(p) = p {
                writeln!(f, "{key}={}", p.display())?;
            }
        }
        let m = &self.model;
        writeln!(f, "latent_dim={}", m.latent_dim)?;
        writeln!(f, "hidden_dim={}", m.hidden_dim)?;
        writeln!(f, "encoder_steps={}", m.encoder_steps)?;
        writeln!(f, "decoder_steps={}", m.decoder_steps)?;
        writeln!(f, "edge_hidden={}", m.edge_hidden)?;
        writeln!(f, "property_hidden={}", m.property_hidden)?;
        writeln!(f, "lambda_latent={}", self.weights.latent)?;
        writeln!(f, "lambda_opt={}", self.weights.opt)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "lr={}", self.adam.lr)?;
        writeln!(f, "beta1={}", self.adam.beta1)?;
        writeln!(f, "beta2={}", self.adam.beta2)?;
        writeln!(f, "eps={}", self.adam.eps)?;
        writeln!(f, "max_grad_norm={}", self.max_grad_norm)?;
        writeln!(f, "encodings={}", self.encodings)?;
        writeln!(f, "recon_cap={}", self.recon_cap)?;
        writeln!(f, "samples={}", self.samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.weights, LossWeights { latent: 0.3, opt: 10.0 });
        assert_eq!(c.model.latent_dim, 100);
        assert_eq!(c.model.encoder_steps, 12);
        assert_eq!((c.encodings, c.recon_cap, c.samples), (20, 5000, 20000));
    }

    #[test]
    fn parse_and_print_round_trip() {
        let c = RunConfig::parse("# toy\nlatent_dim = 16\nlr=0.003\ntrain=data/x.smi\n").unwrap();
        assert_eq!(c.model.latent_dim, 16);
        assert_eq!(c.adam.lr, 0.003);
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(RunConfig::parse("nonsense"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(RunConfig::parse("colour=red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("epochs=-1"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("batch_size=0"), Err(ConfigError::Range { .. })));
        let c = RunConfig::parse("train=/definitely/not/here.smi").unwrap();
        assert!(matches!(c.check_files(), Err(ConfigError::MissingFile { .. })));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for k in RunConfig::KEYS {
            let v = match k {
                "vocab" | "train" | "test" => "f",
                "lr" | "beta1" | "beta2" | "eps" | "lambda_latent" | "lambda_opt" | "max_grad_norm" => "0.5",
                _ => "3",
            };
            c.set(k, v).unwrap();
        }
    }
}
