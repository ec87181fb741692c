use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::item_vae::{ItemVaeSpec, PretrainConfig};
use crate::nn::ContentLikelihood;
use crate::user_vae::{BetaSchedule, Mode, UserVaeSpec};

/// Every hyperparameter of a training run. Serializes to sorted
/// `key=value` lines; floats use the shortest round-trip representation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub k_u: usize,
    pub k_v: usize,
    pub uae_hidden: Vec<usize>,
    pub item_hidden: Vec<usize>,
    pub lambda_v: f64,
    pub lambda_w: f64,
    /// Gaussian content precision; ignored by the Bernoulli likelihood.
    pub lambda_x: f64,
    pub bernoulli_content: bool,
    /// Disables the item-content VAE entirely (with `lambda_v = 0` and
    /// normal mode this is the plain user VAE baseline).
    pub use_content: bool,
    pub beta_max: f64,
    /// Share of all user-side steps over which β ramps up linearly.
    pub anneal_fraction: f64,
    pub epochs: usize,
    pub batch_users: usize,
    pub batch_items: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub normalize_input: bool,
    pub pretrain_epochs: usize,
    pub pretrain_finetune_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub holdout_fraction: f64,
    /// Keep the epoch with the best validation score instead of the last.
    pub select_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Normal,
            k_u: 100,
            k_v: 100,
            uae_hidden: Vec::new(),
            item_hidden: Vec::new(),
            lambda_v: 1.0,
            lambda_w: 0.01,
            lambda_x: 1.0,
            bernoulli_content: false,
            use_content: true,
            beta_max: 0.2,
            anneal_fraction: 0.4,
            epochs: 100,
            batch_users: 500,
            batch_items: 500,
            learning_rate: 1e-3,
            dropout: 0.5,
            normalize_input: false,
            pretrain_epochs: 10,
            pretrain_finetune_epochs: 0,
            pretrain_learning_rate: 1e-2,
            holdout_fraction: 0.2,
            select_best: true,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse(key, t))
        .collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "anneal_fraction",
        "batch_items",
        "batch_users",
        "beta_max",
        "content_likelihood",
        "dropout",
        "epochs",
        "holdout_fraction",
        "item_hidden",
        "k_u",
        "k_v",
        "lambda_v",
        "lambda_w",
        "lambda_x",
        "learning_rate",
        "mode",
        "normalize_input",
        "pretrain_epochs",
        "pretrain_finetune_epochs",
        "pretrain_learning_rate",
        "seed",
        "select_best",
        "uae_hidden",
        "use_content",
    ];

    /// Sets one key; unknown keys are a config error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.trim().parse()?,
            "k_u" => self.k_u = parse(key, value)?,
            "k_v" => self.k_v = parse(key, value)?,
            "uae_hidden" => self.uae_hidden = parse_list(key, value)?,
            "item_hidden" => self.item_hidden = parse_list(key, value)?,
            "lambda_v" => self.lambda_v = parse(key, value)?,
            "lambda_w" => self.lambda_w = parse(key, value)?,
            "lambda_x" => self.lambda_x = parse(key, value)?,
            "content_likelihood" => {
                self.bernoulli_content = match value.trim() {
                    "gaussian" => false,
                    "bernoulli" => true,
                    other => {
                        return Err(Error::config(format!(
                            "content_likelihood must be gaussian or bernoulli, got {other:?}"
                        )))
                    }
                }
            }
            "use_content" => self.use_content = parse_bool(key, value)?,
            "beta_max" => self.beta_max = parse(key, value)?,
            "anneal_fraction" => self.anneal_fraction = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_users" => self.batch_users = parse(key, value)?,
            "batch_items" => self.batch_items = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "normalize_input" => self.normalize_input = parse_bool(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_finetune_epochs" => self.pretrain_finetune_epochs = parse(key, value)?,
            "pretrain_learning_rate" => self.pretrain_learning_rate = parse(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, value)?,
            "select_best" => self.select_best = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// All keys with their values, sorted by key.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let likelihood = if self.bernoulli_content { "bernoulli" } else { "gaussian" };
        let pairs = vec![
            ("anneal_fraction", s(self.anneal_fraction)),
            ("batch_items", s(self.batch_items)),
            ("batch_users", s(self.batch_users)),
            ("beta_max", s(self.beta_max)),
            ("content_likelihood", s(likelihood)),
            ("dropout", s(self.dropout)),
            ("epochs", s(self.epochs)),
            ("holdout_fraction", s(self.holdout_fraction)),
            ("item_hidden", join(&self.item_hidden)),
            ("k_u", s(self.k_u)),
            ("k_v", s(self.k_v)),
            ("lambda_v", s(self.lambda_v)),
            ("lambda_w", s(self.lambda_w)),
            ("lambda_x", s(self.lambda_x)),
            ("learning_rate", s(self.learning_rate)),
            ("mode", s(self.mode)),
            ("normalize_input", s(self.normalize_input)),
            ("pretrain_epochs", s(self.pretrain_epochs)),
            ("pretrain_finetune_epochs", s(self.pretrain_finetune_epochs)),
            ("pretrain_learning_rate", s(self.pretrain_learning_rate)),
            ("seed", s(self.seed)),
            ("select_best", s(self.select_best)),
            ("uae_hidden", join(&self.uae_hidden)),
            ("use_content", s(self.use_content)),
        ];
        debug_assert!(pairs.iter().map(|p| p.0).eq(Self::KEYS.iter().copied()));
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let precisions = [
            ("lambda_v", self.lambda_v),
            ("lambda_w", self.lambda_w),
            ("lambda_x", self.lambda_x),
            ("beta_max", self.beta_max),
        ];
        for (name, v) in precisions {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.k_u == 0 || self.k_v == 0 {
            return Err(Error::config("k_u and k_v must be positive"));
        }
        if self.uae_hidden.contains(&0) || self.item_hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.batch_users == 0 || self.batch_items == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(Error::config("anneal_fraction must lie in [0, 1]"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("holdout_fraction must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !(self.pretrain_learning_rate > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !self.use_content && self.lambda_v > 0.0 {
            return Err(Error::config("lambda_v > 0 requires use_content = true"));
        }
        Ok(())
    }

    pub fn likelihood(&self) -> ContentLikelihood {
        if self.bernoulli_content {
            ContentLikelihood::Bernoulli
        } else {
            ContentLikelihood::Gaussian {
                precision: self.lambda_x,
            }
        }
    }

    pub fn user_spec(&self, n_items: usize) -> UserVaeSpec {
        UserVaeSpec {
            mode: self.mode,
            n_items,
            k_u: self.k_u,
            k_v: self.k_v,
            hidden: self.uae_hidden.clone(),
            normalize_input: self.normalize_input,
        }
    }

    pub fn item_spec(&self, s_dim: usize) -> ItemVaeSpec {
        ItemVaeSpec {
            s_dim,
            hidden: self.item_hidden.clone(),
            k_v: self.k_v,
            likelihood: self.likelihood(),
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            finetune_epochs: self.pretrain_finetune_epochs,
            batch_size: self.batch_items,
            learning_rate: self.pretrain_learning_rate,
            lambda_w: self.lambda_w,
        }
    }

    /// β schedule for a run of `total_steps` user-side steps.
    pub fn beta_schedule(&self, total_steps: u64) -> BetaSchedule {
        BetaSchedule {
            beta_max: self.beta_max,
            anneal_steps: (self.anneal_fraction * total_steps as f64).round() as u64,
        }
    }
}
