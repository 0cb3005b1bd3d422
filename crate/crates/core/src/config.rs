//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Defaults are desk-scale; the
//! full-scale values used for large translation corpora are noted beside
//! each key.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::FeedbackKind;
use crate::data::Task;
use crate::error::{Error, Result};
use crate::memory::ScoreForm;
use crate::model::{ModelSpec, Variant};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    /// Full scale: 512.
    pub embed_dim: usize,
    /// Full scale: 1024.
    pub hidden_dim: usize,
    /// Full scale: 1024.
    pub cell_width: usize,
    /// Full scale: 8. Ignored by the baseline.
    pub cells: usize,
    /// Defaults to `cell_width`.
    pub align_dim: Option<usize>,
    pub share_weights: bool,
    pub literal_init: bool,
    pub literal_address: bool,
    pub feedback: FeedbackKind,
    pub init_noise_std: f64,

    pub rho: f64,
    pub epsilon: f64,
    pub clip_threshold: f64,
    /// Full scale: 80.
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub max_train_length: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many epochs without a new best dev NLL; 0 disables.
    pub patience: usize,

    pub task: Task,
    pub train_size: usize,
    pub dev_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Full scale: 30000.
    pub vocab_cap: usize,
    /// TSV corpora; when set they replace generated data.
    pub train_file: Option<PathBuf>,
    pub dev_file: Option<PathBuf>,

    pub beam: usize,
    /// Defaults to twice `max_len`.
    pub max_decode_len: Option<usize>,
    pub skip_dev_bleu: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            variant: Variant::MemDec,
            embed_dim: 32,
            hidden_dim: 32,
            cell_width: 32,
            cells: 4,
            align_dim: None,
            share_weights: true,
            literal_init: false,
            literal_address: false,
            feedback: FeedbackKind::Tanh,
            init_noise_std: crate::memory::INIT_NOISE_STD,
            rho: t.rho,
            epsilon: t.epsilon,
            clip_threshold: t.clip_threshold,
            batch_size: t.batch_size,
            dropout_rate: t.dropout_rate,
            max_train_length: t.max_train_length,
            seed: t.seed,
            epochs: 10,
            patience: 0,
            task: Task::Copy,
            train_size: 2000,
            dev_size: 200,
            min_len: 3,
            max_len: 10,
            vocab_size: 20,
            vocab_cap: 1000,
            train_file: None,
            dev_file: None,
            beam: 1,
            max_decode_len: None,
            skip_dev_bleu: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("invalid boolean `{value}` for `{key}`")),
    }
}

impl RunConfig {
    /// Parses a whole config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Setting(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim()).map_err(Error::Setting)?;
        self.validate()
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let opt_usize = |v: &str| -> std::result::Result<Option<usize>, String> {
            if v.is_empty() || v == "auto" {
                Ok(None)
            } else {
                parse_value(key, v).map(Some)
            }
        };
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "variant" => self.variant = parse_value(key, v)?,
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "cell_width" => self.cell_width = parse_value(key, v)?,
            "cells" => self.cells = parse_value(key, v)?,
            "align_dim" => self.align_dim = opt_usize(v)?,
            "share_weights" => self.share_weights = parse_bool(key, v)?,
            "literal_init" => self.literal_init = parse_bool(key, v)?,
            "literal_address" => self.literal_address = parse_bool(key, v)?,
            "feedback" => self.feedback = parse_value(key, v)?,
            "init_noise_std" => self.init_noise_std = parse_value(key, v)?,
            "rho" => self.rho = parse_value(key, v)?,
            "epsilon" => self.epsilon = parse_value(key, v)?,
            "clip_threshold" => self.clip_threshold = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, v)?,
            "max_train_length" => self.max_train_length = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "task" => self.task = parse_value(key, v)?,
            "train_size" => self.train_size = parse_value(key, v)?,
            "dev_size" => self.dev_size = parse_value(key, v)?,
            "min_len" => self.min_len = parse_value(key, v)?,
            "max_len" => self.max_len = parse_value(key, v)?,
            "vocab_size" => self.vocab_size = parse_value(key, v)?,
            "vocab_cap" => self.vocab_cap = parse_value(key, v)?,
            "train_file" => self.train_file = opt_path(v),
            "dev_file" => self.dev_file = opt_path(v),
            "beam" => self.beam = parse_value(key, v)?,
            "max_decode_len" => self.max_decode_len = opt_usize(v)?,
            "skip_dev_bleu" => self.skip_dev_bleu = parse_bool(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Setting(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.beam == 0 {
            return Err(Error::Setting("beam must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Setting("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rho: self.rho,
            epsilon: self.epsilon,
            clip_threshold: self.clip_threshold,
            batch_size: self.batch_size,
            dropout_rate: self.dropout_rate,
            max_train_length: self.max_train_length,
            seed: self.seed,
        }
    }

    pub fn model_spec(&self, src_vocab: usize, tgt_vocab: usize) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            src_vocab,
            tgt_vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            cell_width: self.cell_width,
            cells: if self.variant == Variant::MemDec { self.cells } else { 0 },
            align_dim: self.align_dim.unwrap_or(self.cell_width),
            share_weights: self.share_weights,
            literal_init: self.literal_init,
            score_form: if self.literal_address {
                ScoreForm::Linear
            } else {
                ScoreForm::Tanh
            },
            feedback: self.feedback,
            init_noise_std: self.init_noise_std,
        }
    }

    pub fn decode_len(&self) -> usize {
        self.max_decode_len.unwrap_or(2 * self.max_len)
    }
}
