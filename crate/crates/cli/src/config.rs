//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use noisy_cluster::erc::EnvelopePlacement;
use noisy_cluster::sim::ScenarioConfig;
use noisy_cluster::Error;
use serde::{Deserialize, Serialize};

pub const SCHEMA: u32 = 1;

/// Top-level config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub scenario: ScenarioConfig,
    /// Observations to use instead of generated data (CSV with header `x1..xd`).
    #[serde(default)]
    pub sample_csv: Option<PathBuf>,
    /// Size of the generated sample; defaults to the first entry of `n_list`.
    #[serde(default)]
    pub n: Option<usize>,
    /// Fixed bandwidth for `estimate-density` and `cluster`; defaults to the
    /// theory bandwidth.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub quantile: QuantileSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileSettings {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    /// Envelope multiplier; calibrated on a pilot when absent.
    #[serde(default)]
    pub scale_q: Option<f64>,
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_placement")]
    pub placement: EnvelopePlacement,
}

fn default_taus() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_placement() -> EnvelopePlacement {
    EnvelopePlacement::Outer
}

impl Default for QuantileSettings {
    fn default() -> Self {
        QuantileSettings {
            taus: default_taus(),
            scale_q: None,
            t: 0.0,
            placement: default_placement(),
        }
    }
}

impl RunConfig {
    pub fn sample_size(&self) -> usize {
        self.n.unwrap_or(self.scenario.n_list[0])
    }

    fn check(&self) -> Result<(), Error> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {} (expected {SCHEMA})",
                self.schema
            )));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda = {l} must be positive")));
            }
        }
        if self.quantile.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("every tau must lie in (0, 1)".into()));
        }
        self.scenario.validate()
    }
}

/// Reads a config file, or the config embedded in a run manifest.
pub fn load(path: &Path) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let inner = match value.get("run_manifest") {
        Some(_) => value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Config("manifest has no config".into()))?,
        None => value,
    };
    let cfg: RunConfig = serde_json::from_value(inner)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.check()?;
    Ok(cfg)
}
