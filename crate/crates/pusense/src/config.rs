//! Experiment configuration: a single TOML file with a traffic section, a
//! sensing section, and one optional section per subcommand. Unknown keys
//! are rejected so typos surface as errors instead of silently applying
//! defaults.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::detector::SensingConfig;
use crate::hypothesis::WeightMode;
use crate::montecarlo::McMode;
use crate::traffic::{HoldingDist, HoldingKind, TrafficModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub traffic: TrafficSection,
    pub sensing: SensingSection,
    pub roc: Option<RocSection>,
    pub threshold: Option<ThresholdSection>,
    pub models: Option<ModelsSection>,
    pub validate: Option<ValidateSection>,
    pub throughput: Option<ThroughputSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub idle: LawSection,
    pub busy: LawSection,
    pub p_b: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSection {
    pub kind: HoldingKind,
    pub mean_ms: f64,
    pub shape: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub samples: u32,
    pub sample_ms: f64,
    pub snr_db: f64,
    pub max_changes: u32,
    #[serde(default = "default_mode")]
    pub mode: WeightMode,
}

fn default_mode() -> WeightMode {
    WeightMode::Renewal
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocSection {
    pub change_caps: Vec<u32>,
    pub grid_points: Option<usize>,
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub target_pd: f64,
    pub snr_db: Vec<f64>,
    pub change_caps: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub kinds: Vec<HoldingKind>,
    pub grid_points: Option<usize>,
    pub eta: Option<Vec<f64>>,
    pub lognormal_sigma: Option<f64>,
    pub gamma_shape: Option<f64>,
    pub erlang_shape: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub trials: u64,
    pub seed: Option<u64>,
    pub eta: Option<Vec<f64>>,
    pub eta_points: Option<usize>,
    pub modes: Option<Vec<McMode>>,
    pub full_sample_budget: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputSection {
    pub frame_ms: f64,
    pub gamma_s: f64,
    pub tau_ms: Vec<f64>,
    pub target_pd: f64,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        let config: FileConfig = toml::from_str(&text)?;
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        for (name, law) in [("traffic.idle", &self.traffic.idle), ("traffic.busy", &self.traffic.busy)] {
            if !(law.mean_ms > 0.0) || !law.mean_ms.is_finite() {
                return Err(invalid(format!(
                    "{name}.mean_ms must be strictly positive, got {}",
                    law.mean_ms
                )));
            }
            if let Some(shape) = law.shape {
                if !(shape > 0.0) || !shape.is_finite() {
                    return Err(invalid(format!(
                        "{name}.shape must be strictly positive, got {shape}"
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.traffic.p_b) || !self.traffic.p_b.is_finite() {
            return Err(invalid(format!(
                "traffic.p_b must lie in [0, 1], got {}",
                self.traffic.p_b
            )));
        }
        if self.sensing.samples == 0 {
            return Err(invalid("sensing.samples must be at least 1"));
        }
        if !(self.sensing.sample_ms > 0.0) || !self.sensing.sample_ms.is_finite() {
            return Err(invalid(format!(
                "sensing.sample_ms must be strictly positive, got {}",
                self.sensing.sample_ms
            )));
        }
        if !self.sensing.snr_db.is_finite() {
            return Err(invalid(format!(
                "sensing.snr_db must be finite, got {}",
                self.sensing.snr_db
            )));
        }
        if self.sensing.max_changes > self.sensing.samples {
            return Err(invalid(format!(
                "sensing.max_changes = {} exceeds sensing.samples = {}",
                self.sensing.max_changes, self.sensing.samples
            )));
        }
        Ok(())
    }

    /// The traffic model described by the `[traffic]` section.
    pub fn traffic_model(&self) -> Result<TrafficModel, ConfigError> {
        let idle = self.traffic.idle.build("traffic.idle")?;
        let busy = self.traffic.busy.build("traffic.busy")?;
        TrafficModel::new(idle, busy, self.traffic.p_b)
            .map_err(|e| invalid(format!("traffic.p_b: {e}")))
    }

    /// The sensing setup described by the `[sensing]` section.
    pub fn sensing_config(&self) -> Result<SensingConfig, ConfigError> {
        SensingConfig::new(
            self.sensing.samples,
            self.sensing.sample_ms,
            self.sensing.snr_db,
            self.sensing.max_changes,
            self.sensing.mode,
        )
        .map_err(|e| invalid(format!("sensing: {e}")))
    }
}

impl LawSection {
    fn build(&self, name: &str) -> Result<HoldingDist, ConfigError> {
        HoldingDist::from_mean(self.kind, self.mean_ms, self.shape)
            .map_err(|e| invalid(format!("{name}: {e}")))
    }
}
