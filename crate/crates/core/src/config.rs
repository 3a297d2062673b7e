//! Run configuration: TOML text, key overrides, validation and the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CovarianceModel, SpatialMode};
use crate::noise::GridSpec;
use crate::solver::MAX_ORDER;

pub const SEED_ENV: &str = "CHAOSWAVE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hurst: f64,
    pub alpha: f64,
    pub spatial_mode: SpatialMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hurst: 0.75, alpha: 0.5, spatial_mode: SpatialMode::Riesz }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t_horizon: f64,
    pub half_width: f64,
    pub nt: usize,
    pub nx: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t_horizon: 1.0, half_width: 1.0, nt: 16, nx: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Chaos truncation N.
    pub order: usize,
    pub seed: u64,
    pub samples: usize,
    /// Evaluation point (t, x).
    pub t: f64,
    pub x: f64,
    pub deltas: Vec<f64>,
    pub m_ladder: Vec<usize>,
    /// KDE bandwidth; 0 selects Silverman's rule.
    pub bandwidth: f64,
    /// Worker cap; 0 leaves the rayon default.
    pub threads: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            order: 2,
            seed: 20_240_601,
            samples: 10_000,
            t: 1.0,
            x: 0.0,
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            m_ladder: vec![10],
            bandwidth: 0.0,
            threads: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Parses TOML text; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults when `None`), applies `key=value` overrides
    /// with TOML-typed values, then validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            set_key(&mut table, key, value)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; every key is written.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        CovarianceModel::new(self.model.hurst, self.model.alpha, self.model.spatial_mode)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.t_horizon, self.grid.half_width, self.grid.nt, self.grid.nx)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        let g = self.grid_spec()?;
        let r = &self.run;
        if r.order > MAX_ORDER {
            return Err(Error::InvalidParameter(format!("order must be ≤ {MAX_ORDER}, got {}", r.order)));
        }
        if !(r.t > 0.0 && r.t <= g.t_horizon) {
            return Err(Error::InvalidParameter(format!("t must lie in (0, {}], got {}", g.t_horizon, r.t)));
        }
        if !(r.x.abs() < g.half_width) {
            return Err(Error::InvalidParameter(format!("|x| must be < {}, got {}", g.half_width, r.x)));
        }
        if r.deltas.iter().any(|d| !(*d > 0.0 && *d < r.t.min(g.half_width - r.x.abs()))) {
            return Err(Error::InvalidParameter("every δ must lie in (0, min(t, L−|x|))".into()));
        }
        if r.m_ladder.contains(&0) {
            return Err(Error::InvalidParameter("m ladder entries must be positive".into()));
        }
        if !(r.bandwidth >= 0.0 && r.bandwidth.is_finite()) {
            return Err(Error::InvalidParameter("bandwidth must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Sets `section.key` (dotted path) to a TOML-parsed value, falling back to a string.
pub fn set_key(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Reads CHAOSWAVE_SEED as an override pair, if set.
pub fn seed_from_env() -> Result<Option<(String, String)>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let s: u64 = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not a u64")))?;
            Ok(Some(("run.seed".into(), s.to_string())))
        }
        Err(_) => Ok(None),
    }
}
