use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::lifting::{LiftConfig, DEFAULT_EPSILON};
use crate::metrics::{default_radius_fractions, DEFAULT_AP_THRESHOLD};
use crate::regressor::RegressorConfig;

/// Everything a run can be configured with. Loaded from TOML; command-line
/// flags are applied on top and the result is stored in the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every section when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub lift: LiftConfig,
    pub prior: PriorSection,
    pub regressor: RegressorConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub synth: SynthConfig,
    pub gradcheck: GradCheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// Ridge added to every fitted covariance.
    pub epsilon: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// The run aborts when more than this fraction of training samples
    /// cannot be lifted.
    pub max_unprocessable_fraction: f64,
    /// Treat malformed dataset lines as fatal.
    pub strict: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            max_unprocessable_fraction: 0.1,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Distance threshold for AP, meters.
    pub ap_threshold: f64,
    /// PCK radii as fractions of the bounding-box height.
    pub radius_fractions: Vec<f64>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            ap_threshold: DEFAULT_AP_THRESHOLD,
            radius_fractions: default_radius_fractions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    /// Rows in the random batch.
    pub batch: usize,
    pub tolerance: f64,
    /// Tolerance for the linear-only subnetwork.
    pub linear_tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            batch: 8,
            tolerance: 1e-4,
            linear_tolerance: 1e-7,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    /// Pushes the top-level seed into every section.
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.regressor.seed = seed;
            self.synth.seed = seed;
            self.gradcheck.seed = seed;
        }
    }
}
