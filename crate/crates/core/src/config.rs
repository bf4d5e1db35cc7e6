//! Training and model configuration, with a flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Structural ablations. Each flag removes one component from the forward
/// pass; the parameters of a removed component receive no gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_slot2intent: bool,
    pub no_intent2slot: bool,
    pub no_gaussian_attention: bool,
    pub no_cooperation: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.no_slot2intent && self.no_intent2slot {
            return Err(Error::Config(
                "no_slot2intent and no_intent2slot together leave no decoder".into(),
            ));
        }
        Ok(())
    }

    pub fn slot2intent(&self) -> bool {
        !self.no_slot2intent
    }

    pub fn intent2slot(&self) -> bool {
        !self.no_intent2slot
    }

    /// Cooperation needs both an intuitive and a rational feature per task.
    pub fn cooperation(&self) -> bool {
        !self.no_cooperation && self.slot2intent() && self.intent2slot()
    }

    /// Short label used in ablation tables.
    pub fn label(&self) -> &'static str {
        match (
            self.no_slot2intent,
            self.no_intent2slot,
            self.no_gaussian_attention,
            self.no_cooperation,
        ) {
            (false, false, false, false) => "Full PIN model",
            (true, false, false, false) => "w/o Slot2Intent module",
            (false, true, false, false) => "w/o Intent2Slot module",
            (false, false, true, false) => "w/o Gaussian self-attention",
            (false, false, false, true) => "w/o cooperation mechanism",
            _ => "combined ablation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub emb_dim: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            emb_dim: 512,
            hidden: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_decay: f64,
    pub batch_size: usize,
    pub teacher_forcing_rate: f64,
    pub dropout_rate: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            l2_decay: 1e-6,
            batch_size: 16,
            teacher_forcing_rate: 0.9,
            dropout_rate: 0.4,
            lambda: 0.5,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{} = {} is outside [0, 1]", name, v)))
            }
        };
        unit("lambda", self.lambda)?;
        unit("teacher_forcing_rate", self.teacher_forcing_rate)?;
        unit("dropout_rate", self.dropout_rate)?;
        if self.dropout_rate >= 1.0 {
            return Err(Error::Config("dropout_rate must be below 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate = {} must be positive", self.learning_rate)));
        }
        if self.l2_decay < 0.0 {
            return Err(Error::Config("l2_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.ablation.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "l2_decay",
        "batch_size",
        "teacher_forcing_rate",
        "dropout_rate",
        "lambda",
        "max_epochs",
        "patience",
        "seed",
        "no_slot2intent",
        "no_intent2slot",
        "no_gaussian_attention",
        "no_cooperation",
    ];

    /// Sets one field from its text form. Returns `Ok(false)` for keys that
    /// are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "l2_decay" => self.l2_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "teacher_forcing_rate" => self.teacher_forcing_rate = parse(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "no_slot2intent" => self.ablation.no_slot2intent = parse(key, value)?,
            "no_intent2slot" => self.ablation.no_intent2slot = parse(key, value)?,
            "no_gaussian_attention" => self.ablation.no_gaussian_attention = parse(key, value)?,
            "no_cooperation" => self.ablation.no_cooperation = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn write_kv(&self, out: &mut String) {
        let a = &self.ablation;
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "l2_decay = {}", self.l2_decay);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "teacher_forcing_rate = {}", self.teacher_forcing_rate);
        let _ = writeln!(out, "dropout_rate = {}", self.dropout_rate);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "patience = {}", self.patience);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "no_slot2intent = {}", a.no_slot2intent);
        let _ = writeln!(out, "no_intent2slot = {}", a.no_intent2slot);
        let _ = writeln!(out, "no_gaussian_attention = {}", a.no_gaussian_attention);
        let _ = writeln!(out, "no_cooperation = {}", a.no_cooperation);
    }
}

impl ModelDims {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn write_kv(&self, out: &mut String) {
        let _ = writeln!(out, "emb_dim = {}", self.emb_dim);
        let _ = writeln!(out, "hidden = {}", self.hidden);
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("emb_dim and hidden must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{}` for {}", value, key)))
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key {}", n + 1, key)));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}
