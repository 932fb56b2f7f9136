//! `key = value` configuration for the model and the trainer.
//!
//! A [`RunConfig`] merges a config file with command-line overrides and
//! remembers where each value came from. Every key must be supplied by one of
//! the two sources; there are no silent defaults at this level.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{BpgError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k_window: usize,
    pub d_mix: usize,
    pub c1: usize,
    pub d_t: usize,
    pub d_g: usize,
    pub d_node: usize,
    pub clamp: f64,
    pub kernel_size: usize,
    pub seed: u64,
    pub gcn_layers: usize,
    pub edge_hidden: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k_window: 41,
            d_mix: 32,
            c1: 64,
            d_t: 128,
            d_g: 128,
            d_node: 64,
            clamp: 5.0,
            kernel_size: 3,
            seed: 0,
            gcn_layers: 3,
            edge_hidden: 64,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: u64,
    pub w_rot: f64,
    pub w_pos: f64,
    pub w_bone: f64,
    pub fps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            steps: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
            w_rot: 1.0,
            w_pos: 1.0,
            w_bone: 1.0,
            fps: 60.0,
        }
    }
}

pub const MODEL_KEYS: [&str; 12] = [
    "k_window",
    "d_mix",
    "c1",
    "d_t",
    "d_g",
    "d_node",
    "clamp",
    "kernel_size",
    "seed",
    "gcn_layers",
    "edge_hidden",
    "leaky_slope",
];

pub const TRAIN_KEYS: [&str; 11] = [
    "lr",
    "batch_size",
    "steps",
    "beta1",
    "beta2",
    "adam_eps",
    "checkpoint_every",
    "w_rot",
    "w_pos",
    "w_bone",
    "fps",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    File,
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::File => "file",
            Provenance::Flag => "flag",
        })
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| BpgError::Parse {
            path: source.to_string(),
            line: i + 1,
            message: "expected `key = value`".into(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map.get(key).ok_or_else(|| BpgError::MissingKey(key.to_string()))?;
    raw.parse().map_err(|_| BpgError::InvalidValue {
        key: key.to_string(),
        message: format!("cannot parse `{raw}`"),
    })
}

fn check(cond: bool, key: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(BpgError::InvalidValue {
            key: key.to_string(),
            message: message.to_string(),
        })
    }
}

impl ModelConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = ModelConfig {
            k_window: get(map, "k_window")?,
            d_mix: get(map, "d_mix")?,
            c1: get(map, "c1")?,
            d_t: get(map, "d_t")?,
            d_g: get(map, "d_g")?,
            d_node: get(map, "d_node")?,
            clamp: get(map, "clamp")?,
            kernel_size: get(map, "kernel_size")?,
            seed: get(map, "seed")?,
            gcn_layers: get(map, "gcn_layers")?,
            edge_hidden: get(map, "edge_hidden")?,
            leaky_slope: get(map, "leaky_slope")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.k_window >= 2, "k_window", "must be at least 2")?;
        for (k, v) in [
            ("d_mix", self.d_mix),
            ("c1", self.c1),
            ("d_t", self.d_t),
            ("d_g", self.d_g),
            ("d_node", self.d_node),
            ("gcn_layers", self.gcn_layers),
            ("edge_hidden", self.edge_hidden),
        ] {
            check(v > 0, k, "must be positive")?;
        }
        check(
            self.kernel_size % 2 == 1,
            "kernel_size",
            "must be odd",
        )?;
        check(self.clamp.is_finite() && self.clamp > 0.0, "clamp", "must be positive")?;
        check(
            self.leaky_slope.is_finite() && self.leaky_slope >= 0.0,
            "leaky_slope",
            "must be non-negative",
        )?;
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        [
            ("k_window", self.k_window.to_string()),
            ("d_mix", self.d_mix.to_string()),
            ("c1", self.c1.to_string()),
            ("d_t", self.d_t.to_string()),
            ("d_g", self.d_g.to_string()),
            ("d_node", self.d_node.to_string()),
            ("clamp", self.clamp.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("seed", self.seed.to_string()),
            ("gcn_layers", self.gcn_layers.to_string()),
            ("edge_hidden", self.edge_hidden.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl TrainConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = TrainConfig {
            lr: get(map, "lr")?,
            batch_size: get(map, "batch_size")?,
            steps: get(map, "steps")?,
            seed: get(map, "seed")?,
            beta1: get(map, "beta1")?,
            beta2: get(map, "beta2")?,
            adam_eps: get(map, "adam_eps")?,
            checkpoint_every: get(map, "checkpoint_every")?,
            w_rot: get(map, "w_rot")?,
            w_pos: get(map, "w_pos")?,
            w_bone: get(map, "w_bone")?,
            fps: get(map, "fps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.lr.is_finite() && self.lr > 0.0, "lr", "must be positive")?;
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(self.steps > 0, "steps", "must be positive")?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must lie in [0, 1)")?;
        check(self.adam_eps > 0.0, "adam_eps", "must be positive")?;
        check(self.checkpoint_every > 0, "checkpoint_every", "must be positive")?;
        for (k, v) in [("w_rot", self.w_rot), ("w_pos", self.w_pos), ("w_bone", self.w_bone)] {
            check(v.is_finite() && v >= 0.0, k, "must be non-negative")?;
        }
        check(self.fps.is_finite() && self.fps > 0.0, "fps", "must be positive")?;
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        [
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("w_rot", self.w_rot.to_string()),
            ("w_pos", self.w_pos.to_string()),
            ("w_bone", self.w_bone.to_string()),
            ("fps", self.fps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Model and trainer configuration merged from a file and flag overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    provenance: BTreeMap<String, (String, Provenance)>,
}

impl RunConfig {
    /// Merges `file` (may be empty) with `overrides`; overrides win. Unknown
    /// keys are rejected, and every model and trainer key must end up set.
    pub fn merge(file: &BTreeMap<String, String>, overrides: &[(String, String)]) -> Result<Self> {
        let known = |k: &str| MODEL_KEYS.contains(&k) || TRAIN_KEYS.contains(&k);
        let mut provenance = BTreeMap::new();
        for (k, v) in file {
            if !known(k) {
                return Err(BpgError::InvalidValue {
                    key: k.clone(),
                    message: "unknown key".into(),
                });
            }
            provenance.insert(k.clone(), (v.clone(), Provenance::File));
        }
        for (k, v) in overrides {
            if !known(k) {
                return Err(BpgError::InvalidValue {
                    key: k.clone(),
                    message: "unknown key".into(),
                });
            }
            provenance.insert(k.clone(), (v.clone(), Provenance::Flag));
        }
        for k in MODEL_KEYS.iter().chain(TRAIN_KEYS.iter()) {
            if !provenance.contains_key(*k) {
                return Err(BpgError::MissingKey(k.to_string()));
            }
        }
        let flat: BTreeMap<String, String> =
            provenance.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect();
        Ok(RunConfig {
            model: ModelConfig::from_map(&flat)?,
            train: TrainConfig::from_map(&flat)?,
            provenance,
        })
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.provenance.get(key).map(|(_, p)| *p)
    }

    /// `key = value  # source` lines, sorted by key.
    pub fn echo(&self) -> String {
        self.provenance
            .iter()
            .map(|(k, (v, p))| format!("{k} = {v}  # {p}\n"))
            .collect()
    }
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| BpgError::InvalidArgument(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// A complete config file with the default values, suitable as a template.
pub fn default_config_text() -> String {
    let mut map = ModelConfig::default().to_map();
    map.extend(TrainConfig::default().to_map());
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
