//! Flat, typed run configuration. Every CLI flag has a config-file key of
//! the same name; flags override the file. Unknown keys and type
//! mismatches are hard errors that name the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::NUM_FOLDS;
use crate::error::{Error, Result};
use crate::mm::{Blend, CaMode, MmConfig};
use crate::pos::{PosConfig, PosEncoding};

pub const CONFIG_DIR_ENV: &str = "MASKMATCH_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    // Model
    pub image_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub proposals: usize,
    pub ca_layers: usize,
    pub positional_encoding: String,
    pub blend: String,
    pub dropout: f64,
    // Ablation switches
    pub sa: String,
    pub ca: String,
    pub lm: String,
    // Data
    pub fold: usize,
    pub shots: usize,
    pub augment: bool,
    // Optimization
    pub iterations: Option<u64>,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub grad_clip: f64,
    pub seed: u64,
    // Evaluation
    pub episodes: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            image_size: 64,
            d_model: 32,
            heads: 4,
            d_ffn: 64,
            proposals: 16,
            ca_layers: 1,
            positional_encoding: "off".into(),
            blend: "linear".into(),
            dropout: 0.0,
            sa: "on".into(),
            ca: "on".into(),
            lm: "on".into(),
            fold: 0,
            shots: 1,
            augment: true,
            iterations: None,
            batch_size: 4,
            base_lr: 1e-4,
            weight_decay: 5e-2,
            poly_power: 0.9,
            lambda1: 10.0,
            lambda2: 6.0,
            grad_clip: 0.0,
            seed: 0,
            episodes: 200,
        }
    }
}

fn bad_key(key: &str, why: &str) -> Error {
    Error::config(format!("{key}: {why}"))
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| bad_key(key, "expected a non-negative integer"))
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as u64)
        .ok_or_else(|| bad_key(key, "expected a non-negative integer"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad_key(key, "expected a number")),
    }
}

fn as_str(key: &str, v: &toml::Value) -> Result<String> {
    v.as_str().map(|s| s.to_string()).ok_or_else(|| bad_key(key, "expected a string"))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad_key(key, "expected a boolean"))
}

impl Config {
    /// Applies a flat key/value table on top of `self`. Unknown keys are
    /// hard errors.
    pub fn apply(&mut self, table: &toml::Table) -> Result<()> {
        for (key, value) in table {
            match key.as_str() {
                "image_size" => self.image_size = as_usize(key, value)?,
                "d_model" => self.d_model = as_usize(key, value)?,
                "heads" => self.heads = as_usize(key, value)?,
                "d_ffn" => self.d_ffn = as_usize(key, value)?,
                "proposals" => self.proposals = as_usize(key, value)?,
                "ca_layers" => self.ca_layers = as_usize(key, value)?,
                "positional_encoding" => self.positional_encoding = as_str(key, value)?,
                "blend" => self.blend = as_str(key, value)?,
                "dropout" => self.dropout = as_f64(key, value)?,
                "sa" => self.sa = as_str(key, value)?,
                "ca" => self.ca = as_str(key, value)?,
                "lm" => self.lm = as_str(key, value)?,
                "fold" => self.fold = as_usize(key, value)?,
                "shots" => self.shots = as_usize(key, value)?,
                "augment" => self.augment = as_bool(key, value)?,
                "iterations" => self.iterations = Some(as_u64(key, value)?),
                "batch_size" => self.batch_size = as_usize(key, value)?,
                "base_lr" => self.base_lr = as_f64(key, value)?,
                "weight_decay" => self.weight_decay = as_f64(key, value)?,
                "poly_power" => self.poly_power = as_f64(key, value)?,
                "lambda1" => self.lambda1 = as_f64(key, value)?,
                "lambda2" => self.lambda2 = as_f64(key, value)?,
                "grad_clip" => self.grad_clip = as_f64(key, value)?,
                "seed" => self.seed = as_u64(key, value)?,
                "episodes" => self.episodes = as_usize(key, value)?,
                other => return Err(bad_key(other, "unknown configuration key")),
            }
        }
        Ok(())
    }

    /// Loads and applies a config file. A bare relative name that does not
    /// exist is also looked up under `$MASKMATCH_CONFIG_DIR`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let resolved = resolve_config_path(path)?;
        let text = std::fs::read_to_string(&resolved)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("{}: {e}", resolved.display())))?;
        self.apply(&table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(bad_key("image_size", "must be a positive multiple of 32"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(bad_key("heads", "must divide d_model"));
        }
        if self.proposals == 0 {
            return Err(bad_key("proposals", "must be >= 1"));
        }
        if self.ca_layers == 0 {
            return Err(bad_key("ca_layers", "must be >= 1"));
        }
        if !matches!(self.positional_encoding.as_str(), "off" | "sine") {
            return Err(bad_key("positional_encoding", "must be 'off' or 'sine'"));
        }
        if !matches!(self.blend.as_str(), "softmax" | "linear") {
            return Err(bad_key("blend", "must be 'softmax' or 'linear'"));
        }
        if self.dropout != 0.0 {
            return Err(bad_key("dropout", "is fixed off at this scale; only 0.0 is accepted"));
        }
        if !matches!(self.sa.as_str(), "on" | "off") {
            return Err(bad_key("sa", "must be 'on' or 'off'"));
        }
        if !matches!(self.ca.as_str(), "on" | "off" | "nonparam") {
            return Err(bad_key("ca", "must be 'on', 'off', or 'nonparam'"));
        }
        if !matches!(self.lm.as_str(), "on" | "off") {
            return Err(bad_key("lm", "must be 'on' or 'off'"));
        }
        if self.fold >= NUM_FOLDS {
            return Err(bad_key("fold", "must be 0..=3"));
        }
        if self.shots == 0 {
            return Err(bad_key("shots", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(bad_key("batch_size", "must be >= 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(bad_key("base_lr", "must be a positive number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad_key("weight_decay", "must be non-negative"));
        }
        if !(self.poly_power > 0.0 && self.poly_power.is_finite()) {
            return Err(bad_key("poly_power", "must be positive"));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(bad_key("lambda1/lambda2", "must be finite"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(bad_key("grad_clip", "must be non-negative (0 disables)"));
        }
        if self.episodes == 0 {
            return Err(bad_key("episodes", "must be >= 1"));
        }
        Ok(())
    }

    pub fn pos_encoding(&self) -> PosEncoding {
        match self.positional_encoding.as_str() {
            "sine" => PosEncoding::Sine,
            _ => PosEncoding::Off,
        }
    }

    pub fn ca_mode(&self) -> CaMode {
        match self.ca.as_str() {
            "on" => CaMode::Learned,
            "nonparam" => CaMode::NonParametric,
            _ => CaMode::Off,
        }
    }

    pub fn blend_mode(&self) -> Blend {
        match self.blend.as_str() {
            "linear" => Blend::Linear,
            _ => Blend::Softmax,
        }
    }

    pub fn sa_on(&self) -> bool {
        self.sa == "on"
    }

    pub fn lm_on(&self) -> bool {
        self.lm == "on"
    }

    pub fn pos_config(&self) -> PosConfig {
        PosConfig {
            n_proposals: self.proposals,
            d_model: self.d_model,
            heads: self.heads,
            d_ffn: self.d_ffn,
            pos_encoding: self.pos_encoding(),
        }
    }

    pub fn mm_config(&self) -> MmConfig {
        MmConfig {
            sa: self.sa_on(),
            ca: self.ca_mode(),
            lm: self.lm_on(),
            d_model: self.d_model,
            heads: self.heads,
            d_ffn: self.d_ffn,
            ca_layers: self.ca_layers,
            n_proposals: self.proposals,
            blend: self.blend_mode(),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            pos_encoding: self.pos_encoding(),
        }
    }

    pub fn data_config(&self) -> Result<crate::data::DataConfig> {
        crate::data::DataConfig::new(self.image_size, self.fold)
    }

    /// Per-stage default iteration budgets at desk scale.
    pub fn iterations_for(&self, stage: &str) -> u64 {
        self.iterations.unwrap_or(match stage {
            "pos" => 2000,
            "joint" => 3000,
            _ => 1000,
        })
    }

    /// Canonical TOML snapshot (stable key order).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Config> {
        let table: toml::Table = text.parse().map_err(|e| Error::config(format!("config snapshot: {e}")))?;
        let mut cfg = Config::default();
        cfg.apply(&table)?;
        Ok(cfg)
    }

    /// Stable fingerprint of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        hex(&h.finalize())
    }

    /// Flat key -> value view, echoed into run manifests.
    pub fn to_map(&self) -> BTreeMap<String, toml::Value> {
        let table: toml::Table = self.to_toml().parse().expect("round trip");
        table.into_iter().collect()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_config_path(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
            let candidate = PathBuf::from(dir).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::config(format!("config: file '{}' not found", path.display())))
}
