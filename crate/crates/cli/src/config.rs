//! Experiment configuration files.
//!
//! A config is a TOML document with a `schema_version` and sections
//! `corpus`, `model`, `train`, `unlearn` and optionally `sweep`. Unknown keys
//! are rejected at every level, and errors name the offending field path,
//! e.g. `corpus.n_entities`.
//!
//! `unlearn.noise_sigma` is a standard deviation. A noise variance `v` from
//! the usual grid {0.01, 0.001, 0.0001} is written as `sqrt(v)`.

use std::path::{Path, PathBuf};

use grinlab::data::CorpusConfig;
use grinlab::model::TrainOptions;
use grinlab::unlearn::{LossKind, MaskOrigin, UnlearnConfig};
use grinlab::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub unlearn: UnlearnConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    /// Unlearning seeds; sweep cells average over them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Model shape. `vocab_size` defaults to the corpus vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub context_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            vocab_size: None,
            context_len: 32,
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, vocab_len: usize) -> Result<ModelConfig> {
        let vocab_size = self.vocab_size.unwrap_or(vocab_len);
        if vocab_size < vocab_len {
            return Err(CliError::Config(format!(
                "model.vocab_size ({vocab_size}) is smaller than the corpus vocabulary ({vocab_len})"
            )));
        }
        let cfg = ModelConfig {
            vocab_size,
            context_len: self.context_len,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Values to enumerate. An empty or missing list uses the `unlearn` value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub loss_kind: Vec<LossKind>,
    pub origin: Vec<MaskOrigin>,
    pub p_fraction: Vec<f64>,
    pub noise_sigma: Vec<f64>,
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
}

fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    /// Cartesian product in the fixed order loss, origin, p, sigma, lr,
    /// epochs, with the last axis varying fastest.
    pub fn cells(&self, base: &UnlearnConfig) -> Vec<UnlearnConfig> {
        let mut out = Vec::new();
        for &loss_kind in &or_base(&self.loss_kind, base.loss_kind) {
            for &origin in &or_base(&self.origin, base.origin) {
                for &p_fraction in &or_base(&self.p_fraction, base.p_fraction) {
                    for &noise_sigma in &or_base(&self.noise_sigma, base.noise_sigma) {
                        for &lr in &or_base(&self.lr, base.lr) {
                            for &epochs in &or_base(&self.epochs, base.epochs) {
                                out.push(UnlearnConfig {
                                    loss_kind,
                                    origin,
                                    p_fraction,
                                    noise_sigma,
                                    lr,
                                    epochs,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl Default for ExperimentConfig {
    /// The desk-scale setting: 100 entities with 10% forgotten, a 2-layer
    /// width-64 model trained for 30 epochs, and PO unlearning on a 40% GRI
    /// mask with noise of variance 0.001.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            corpus: CorpusConfig::default(),
            model: ModelSection::default(),
            train: TrainOptions::default(),
            unlearn: UnlearnConfig::default(),
            sweep: None,
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.corpus.validate()?;
        self.model.resolve(grinlab::data::vocabulary().len())?;
        if self.train.epochs == 0 || self.train.batch_size == 0 || self.train.grad_accum == 0 {
            return Err(CliError::Config(
                "train.epochs, train.batch_size and train.grad_accum must be positive".into(),
            ));
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return Err(CliError::Config("train.lr must be finite and non-negative".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        self.unlearn.validate()?;
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Sweep cells, or the single `unlearn` cell when no sweep is declared.
    pub fn cells(&self) -> Vec<UnlearnConfig> {
        match &self.sweep {
            Some(grid) => grid.cells(&self.unlearn),
            None => vec![self.unlearn.clone()],
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().trim().to_string();
        CliError::Config(describe(&path, &message))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe(path: &str, message: &str) -> String {
    let join = |field: &str| if path == "." { field.to_string() } else { format!("{path}.{field}") };
    if let Some(rest) = message.strip_prefix("missing field `") {
        let field = rest.split('`').next().unwrap_or_default();
        return format!("{}: missing field", join(field));
    }
    if let Some(rest) = message.strip_prefix("unknown field `") {
        let field = rest.split('`').next().unwrap_or_default();
        return format!("{}: unknown field", join(field));
    }
    format!("{path}: {message}")
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(json))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
