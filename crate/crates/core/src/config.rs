//! Engine configuration file: one `key = value` per line, `#` comments.
//!
//! ```text
//! feature.source = K
//! feature.timestep_mode = final        # or average_from:500
//! feature.layer = down_0               # omit for the first encoder layer
//! graphcut.C = 1e6
//! graphcut.lambda = 100
//! graphcut.sigma = 10                  # 25 for SDXL-derived stacks
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_prep::FeatureSelection;
use crate::graph_cut::GraphCutParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub selection: FeatureSelection,
    pub params: GraphCutParams,
}

pub const KEYS: [&str; 6] = [
    "feature.source",
    "feature.timestep_mode",
    "feature.layer",
    "graphcut.C",
    "graphcut.lambda",
    "graphcut.sigma",
];

impl EngineConfig {
    /// Parses config text; unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EngineConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            let number = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| err(format!("{key}: {v:?} is not a number ({e})")))
            };
            match key {
                "feature.source" => cfg.selection.source = value.parse().map_err(err)?,
                "feature.timestep_mode" => {
                    cfg.selection.timestep_mode = value.parse().map_err(err)?
                }
                "feature.layer" => {
                    cfg.selection.layer = (!value.is_empty()).then(|| value.to_string())
                }
                "graphcut.C" => cfg.params.c = number(value)?,
                "graphcut.lambda" => cfg.params.lambda = number(value)?,
                "graphcut.sigma" => cfg.params.sigma = number(value)?,
                _ => unreachable!(),
            }
        }
        cfg.params.validate().map_err(|e| ConfigError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

impl fmt::Display for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "feature.source = {}", self.selection.source)?;
        writeln!(f, "feature.timestep_mode = {}", self.selection.timestep_mode)?;
        if let Some(layer) = &self.selection.layer {
            writeln!(f, "feature.layer = {layer}")?;
        }
        writeln!(f, "graphcut.C = {}", self.params.c)?;
        writeln!(f, "graphcut.lambda = {}", self.params.lambda)?;
        writeln!(f, "graphcut.sigma = {}", self.params.sigma)
    }
}
