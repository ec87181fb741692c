use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Training hyperparameters plus the data and protocol keys of a run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub interactions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Train, validation and test shares of the users.
    pub split_ratios: (u32, u32, u32),
    pub n_splits: usize,
    pub m_list: Vec<usize>,
    /// Cold items for the offline cold-start protocol; 10% of the catalog
    /// when unset.
    pub n_cold: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            interactions: None,
            features: None,
            split_ratios: (8, 1, 1),
            n_splits: 1,
            m_list: vec![20, 40, 100],
            n_cold: None,
        }
    }
}

pub const RUN_KEYS: &[&str] = &[
    "features",
    "interactions",
    "m_list",
    "n_cold",
    "n_splits",
    "split_ratios",
];

pub fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Usage(format!("{key}: bad integer {t:?}")))
        })
        .collect()
}

pub fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Usage(format!("{key}: bad number {t:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` pair. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let value = value.trim();
        match key {
            "interactions" => self.interactions = Some(base.join(value)),
            "features" => self.features = Some(base.join(value)),
            "split_ratios" => {
                let r = parse_usize_list(key, value)?;
                let [a, b, c] = r[..] else {
                    return Err(Error::config("split_ratios needs three integers"));
                };
                self.split_ratios = (a as u32, b as u32, c as u32);
            }
            "n_splits" => {
                self.n_splits = value
                    .parse()
                    .map_err(|_| Error::config(format!("n_splits: bad integer {value:?}")))?
            }
            "m_list" => self.m_list = parse_usize_list(key, value)?,
            "n_cold" => {
                self.n_cold = Some(
                    value
                        .parse()
                        .map_err(|_| Error::config(format!("n_cold: bad integer {value:?}")))?,
                )
            }
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v, base).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
            seen.push(k.trim().to_string());
        }
        for key in TrainConfig::KEYS.iter().chain(RUN_KEYS) {
            if !seen.iter().any(|s| s == key) {
                log::info!("config key {key} not set, using its default");
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.n_splits == 0 {
            return Err(Error::config("n_splits must be at least 1"));
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(Error::config("m_list needs positive cutoffs"));
        }
        Ok(())
    }

    /// Every key with its effective value, sorted by key.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let (a, b, c) = self.split_ratios;
        let mut pairs: Vec<(String, String)> = self
            .train
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        pairs.push(("features".into(), path(&self.features)));
        pairs.push(("interactions".into(), path(&self.interactions)));
        pairs.push((
            "m_list".into(),
            self.m_list.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        ));
        if let Some(n) = self.n_cold {
            pairs.push(("n_cold".into(), n.to_string()));
        }
        pairs.push(("n_splits".into(), self.n_splits.to_string()));
        pairs.push(("split_ratios".into(), format!("{a},{b},{c}")));
        pairs.sort();
        pairs
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
