use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::{GateSpec, Vec3};
use super::WorldError;
use crate::sync::DEFAULT_WORLD_STEP_US;

const EASY: &str = include_str!("../../data/scenarios/easy.json");
const HARD: &str = include_str!("../../data/scenarios/hard.json");
const OPEN: &str = include_str!("../../data/scenarios/open.json");

pub const BUILTIN_SCENARIOS: [&str; 3] = ["easy", "hard", "open"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub position: Vec3,
    #[serde(default)]
    pub heading_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelNoise {
    /// Standard deviation in grey levels.
    pub sigma: f64,
    pub seed: u64,
}

/// Everything the world needs to (re)build itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub gates: Vec<GateSpec>,
    pub start: StartPose,
    #[serde(default = "default_step")]
    pub world_step_us: u64,
    #[serde(default = "default_fov")]
    pub camera_fov_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PixelNoise>,
}

fn default_step() -> u64 {
    DEFAULT_WORLD_STEP_US
}

fn default_fov() -> f64 {
    80.0
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| WorldError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "easy" => EASY,
            "hard" => HARD,
            "open" => OPEN,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled scenario is valid"))
    }

    /// A built-in name, or else a path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self, WorldError> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None if Path::new(name_or_path).exists() => Self::load(name_or_path),
            None => Err(WorldError::Scenario(format!("unknown scenario `{name_or_path}`"))),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.world_step_us == 0 {
            return Err(WorldError::Scenario("world_step_us must be positive".into()));
        }
        if !(self.camera_fov_deg > 0.0 && self.camera_fov_deg < 180.0) {
            return Err(WorldError::Scenario(format!(
                "camera FoV {} outside (0, 180)",
                self.camera_fov_deg
            )));
        }
        if self.start.position[2] < 0.0 {
            return Err(WorldError::Scenario("start below ground".into()));
        }
        if let Some(g) = self.gates.iter().find(|g| !g.is_valid()) {
            return Err(WorldError::Scenario(format!("invalid gate at {:?}", g.center)));
        }
        Ok(())
    }

    /// Bearing of gate `i` from the start pose, relative to the start heading.
    pub fn gate_bearing_rad(&self, i: usize) -> Option<f64> {
        let g = self.gates.get(i)?;
        let dx = g.center[0] - self.start.position[0];
        let dy = g.center[1] - self.start.position[1];
        Some(dy.atan2(dx) - self.start.heading_rad)
    }
}
