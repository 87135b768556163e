//! Flat `key = value` training configuration.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predictors::Backbone;
use crate::selection::{k_from_ratio, SelectionMode};

/// Which selection scheme a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// All fields, unscaled.
    None,
    /// Late selection over all embedded fields.
    Adafs,
    /// Early selection with an auxiliary model.
    Aefs,
    /// A fixed random `k`-subset of fields weighted `1/k`.
    RandomHalf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Adafs, Method::Aefs, Method::RandomHalf];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::None => "none",
            Method::Adafs => "adafs",
            Method::Aefs => "aefs",
            Method::RandomHalf => "random-half",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Method::None),
            "adafs" => Ok(Method::Adafs),
            "aefs" => Ok(Method::Aefs),
            "random-half" | "random_half" => Ok(Method::RandomHalf),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected none, adafs, aefs or random-half)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub mode: SelectionMode,
    pub batch_size: usize,
    pub r: f64,
    pub d1: usize,
    pub d2: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub pretrain_epochs: usize,
    pub enable_eal: bool,
    pub enable_pal: bool,
    pub enable_topk_reweight: bool,
    pub backbone_main: Backbone,
    pub backbone_aux: Backbone,
    pub hidden_dims: Vec<usize>,
    pub n_cross_layers: usize,
    pub min_freq: u64,
    /// Dataset directory (`data.csv` + `schema.txt`); empty when data is
    /// supplied programmatically.
    pub data: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Aefs,
            mode: SelectionMode::Hard,
            batch_size: 2048,
            r: 0.5,
            d1: 32,
            d2: 4,
            max_epochs: 10,
            lr: 1e-3,
            seed: 0,
            split_seed: 0,
            pretrain_epochs: 0,
            enable_eal: true,
            enable_pal: true,
            enable_topk_reweight: true,
            backbone_main: Backbone::Mlp,
            backbone_aux: Backbone::Mlp,
            hidden_dims: vec![16, 16],
            n_cross_layers: 2,
            min_freq: 10,
            data: String::new(),
        }
    }
}

pub const CONFIG_KEYS: [&str; 20] = [
    "method",
    "mode",
    "batch_size",
    "r",
    "d1",
    "d2",
    "max_epochs",
    "lr",
    "seed",
    "split_seed",
    "pretrain_epochs",
    "enable_eal",
    "enable_pal",
    "enable_topk_reweight",
    "backbone_main",
    "backbone_aux",
    "hidden_dims",
    "n_cross_layers",
    "min_freq",
    "data",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "method" => self.method = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "r" => self.r = parse_value(key, value)?,
            "d1" => self.d1 = parse_value(key, value)?,
            "d2" => self.d2 = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "split_seed" => self.split_seed = parse_value(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "enable_eal" => self.enable_eal = parse_bool(key, value)?,
            "enable_pal" => self.enable_pal = parse_bool(key, value)?,
            "enable_topk_reweight" => self.enable_topk_reweight = parse_bool(key, value)?,
            "backbone_main" => self.backbone_main = value.parse()?,
            "backbone_aux" => self.backbone_aux = value.parse()?,
            "hidden_dims" => {
                self.hidden_dims = value
                    .split(',')
                    .map(|v| parse_value(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "n_cross_layers" => self.n_cross_layers = parse_value(key, value)?,
            "min_freq" => self.min_freq = parse_value(key, value)?,
            "data" => self.data = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text: every key, fixed order. `parse(to_text())` is lossless.
    pub fn to_text(&self) -> String {
        let dims: Vec<String> = self.hidden_dims.iter().map(usize::to_string).collect();
        let values = [
            self.method.to_string(),
            self.mode.to_string(),
            self.batch_size.to_string(),
            self.r.to_string(),
            self.d1.to_string(),
            self.d2.to_string(),
            self.max_epochs.to_string(),
            self.lr.to_string(),
            self.seed.to_string(),
            self.split_seed.to_string(),
            self.pretrain_epochs.to_string(),
            self.enable_eal.to_string(),
            self.enable_pal.to_string(),
            self.enable_topk_reweight.to_string(),
            self.backbone_main.to_string(),
            self.backbone_aux.to_string(),
            dims.join(","),
            self.n_cross_layers.to_string(),
            self.min_freq.to_string(),
            self.data.clone(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("r must lie in (0, 1], got {}", self.r)));
        }
        if self.d1 == 0 || self.d2 == 0 || self.d2 > self.d1 {
            return Err(Error::Config(format!(
                "need 0 < d2 <= d1, got d1={} d2={}",
                self.d1, self.d2
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be a non-empty list of positive sizes".into()));
        }
        if self.n_cross_layers == 0 && (self.backbone_main == Backbone::Dcn || self.backbone_aux == Backbone::Dcn) {
            return Err(Error::Config("DCN needs n_cross_layers >= 1".into()));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k(&self, n_fields: usize) -> Result<usize> {
        k_from_ratio(n_fields, self.r)
    }

    /// SHA-256 of the canonical text with the seed cleared.
    pub fn hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let digest = Sha256::digest(unseeded.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<first 12 hex of hash>-s<seed>`.
    pub fn run_dir_name(&self) -> String {
        format!("{}-s{}", &self.hash()[..12], self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.method = Method::RandomHalf;
        c.lr = 0.003;
        c.hidden_dims = vec![32, 8, 4];
        c.enable_pal = false;
        c.data = "runs/data".into();
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_with_comments_and_overrides() {
        let c = TrainConfig::parse("# comment\nmethod = adafs\nmode=soft  # late\nno-op-free = 1\n");
        assert!(matches!(c, Err(Error::Config(_))));
        let mut c = TrainConfig::parse("method = adafs\nmode=soft\nenable-eal = off\n").unwrap();
        assert_eq!(c.method, Method::Adafs);
        assert_eq!(c.mode, SelectionMode::Soft);
        assert!(!c.enable_eal);
        c.set("d2", "8").unwrap();
        assert_eq!(c.d2, 8);
        assert!(c.set("d2", "x").is_err());
        assert!(TrainConfig::parse("just words").is_err());
    }

    #[test]
    fn validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for (k, v) in [("r", "0"), ("r", "1.5"), ("d2", "64"), ("batch_size", "1"), ("hidden_dims", "0")] {
            let mut c = ok.clone();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.run_dir_name(), b.run_dir_name());
        assert!(b.run_dir_name().ends_with("-s7"));
        b.d2 = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
