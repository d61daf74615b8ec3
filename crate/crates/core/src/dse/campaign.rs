use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::ComparisonSpec;
use super::{DseError, ExperimentConfig, DEFAULT_MAX_SIM_TIME_S};

fn default_max_time() -> f64 {
    DEFAULT_MAX_SIM_TIME_S
}

/// Cartesian product of batteries and speeds on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub prefix: String,
    pub scenario: String,
    pub batteries: Vec<String>,
    #[serde(default)]
    pub speeds_kmh: Vec<f64>,
    /// Adds one adaptive-policy run per battery.
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_override_g: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_time")]
    pub max_sim_time_s: f64,
    /// Compare every other battery against this one at the same speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_battery: Option<String>,
    /// Compare the adaptive run against each constant speed.
    #[serde(default)]
    pub compare_adaptive: bool,
}

impl Matrix {
    pub fn run_id(&self, battery: &str, speed: Option<f64>) -> String {
        match speed {
            Some(v) => format!("{}-{battery}-{v}", self.prefix),
            None => format!("{}-{battery}-adaptive", self.prefix),
        }
    }

    fn speeds(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.speeds_kmh
            .iter()
            .map(|&v| Some(v))
            .chain(self.adaptive.then_some(None))
    }

    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for b in &self.batteries {
            for speed in self.speeds() {
                let mut cfg = ExperimentConfig::new(&self.run_id(b, speed), &self.scenario, b, speed.unwrap_or(0.0));
                if speed.is_none() {
                    cfg = cfg.adaptive();
                }
                cfg.weight_override_g = self.weight_override_g;
                cfg.seed = self.seed;
                cfg.max_sim_time_s = self.max_sim_time_s;
                out.push(cfg);
            }
        }
        out
    }

    pub fn comparisons(&self) -> Vec<ComparisonSpec> {
        let mut out = Vec::new();
        if let Some(base) = &self.baseline_battery {
            for b in self.batteries.iter().filter(|b| *b != base) {
                for speed in self.speeds() {
                    out.push(ComparisonSpec {
                        name: format!("{} vs {}", self.run_id(b, speed), self.run_id(base, speed)),
                        baseline: self.run_id(base, speed),
                        candidate: self.run_id(b, speed),
                    });
                }
            }
        }
        if self.compare_adaptive && self.adaptive {
            for b in &self.batteries {
                for &v in &self.speeds_kmh {
                    out.push(ComparisonSpec {
                        name: format!("{} vs {}", self.run_id(b, None), self.run_id(b, Some(v))),
                        baseline: self.run_id(b, Some(v)),
                        candidate: self.run_id(b, None),
                    });
                }
            }
        }
        out
    }
}

/// A sweep description loaded from JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Campaign {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub runs: Vec<ExperimentConfig>,
    #[serde(default)]
    pub matrices: Vec<Matrix>,
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
}

impl Campaign {
    pub fn from_json(text: &str) -> Result<Self, DseError> {
        serde_json::from_str(text).map_err(|e| DseError::Json(format!("campaign: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DseError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DseError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Explicit runs first, then each matrix in order.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>, DseError> {
        let mut all = self.runs.clone();
        for m in &self.matrices {
            all.extend(m.expand());
        }
        if all.is_empty() {
            return Err(DseError::EmptySweep);
        }
        let mut seen = BTreeSet::new();
        for c in &all {
            if !seen.insert(c.id.as_str()) {
                return Err(DseError::Invalid(c.id.clone(), "duplicate run id".into()));
            }
        }
        Ok(all)
    }

    pub fn all_comparisons(&self) -> Vec<ComparisonSpec> {
        let mut out = self.comparisons.clone();
        for m in &self.matrices {
            out.extend(m.comparisons());
        }
        out
    }
}
