//! TOML run configurations. Unknown keys are rejected.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use cmlfactor::experiments::CalibrationGrid;
use cmlfactor::local_map::LocalMapParams;
use cmlfactor::simulator::BoundaryPolicy;
use cmlfactor::stats::DEFAULT_LJUNG_BOX_LAGS;

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    path.map_or_else(|| Ok(T::default()), load)
}

fn default_lags() -> usize {
    DEFAULT_LJUNG_BOX_LAGS
}
fn default_threshold() -> f64 {
    0.0042
}
fn default_truncate() -> BoundaryPolicy {
    BoundaryPolicy::Truncate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    #[serde(default)]
    pub grid: CalibrationGrid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default)]
    pub diagnose_empirical: bool,
    #[serde(default = "default_truncate")]
    pub boundary: BoundaryPolicy,
    #[serde(default = "default_threshold")]
    pub mse_threshold: f64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            grid: CalibrationGrid::default(),
            seed: 0,
            lags: default_lags(),
            diagnose_empirical: false,
            boundary: default_truncate(),
            mse_threshold: default_threshold(),
        }
    }
}

fn default_n_series() -> usize {
    1000
}
fn default_series_len() -> usize {
    251
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(default)]
    pub map: LocalMapParams,
    #[serde(default = "default_n_series")]
    pub n_series: usize,
    #[serde(default = "default_series_len", rename = "t")]
    pub series_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            map: LocalMapParams::default(),
            n_series: default_n_series(),
            series_len: default_series_len(),
            seed: 0,
        }
    }
}
