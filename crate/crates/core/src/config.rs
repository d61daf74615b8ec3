//! System configuration file.
//!
//! One JSON document drives a simulation: `modules` declares each platform
//! module with its opcodes and a module-specific `power` section, `world`
//! tunes the world simulator and `mission` the flight software. Any section
//! or field may be omitted; the typed defaults below apply.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{rotor_disk_area, MotorPowerModel, CALIBRATED_FIGURE_OF_MERIT, GRAVITY};
use crate::protocol::Direction;

pub const DEFAULT_CONFIG_JSON: &str = include_str!("../data/default_config.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(String, #[source] serde_json::Error),
    #[error("module `{module}`: {message}")]
    Module { module: String, message: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpcodeDecl {
    pub name: String,
    pub direction: Direction,
    pub payload_schema: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleConfig {
    pub name: String,
    #[serde(default)]
    pub opcodes: Vec<OpcodeDecl>,
    #[serde(default)]
    pub power: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default)]
    pub modules: Vec<ModuleConfig>,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub mission: MissionConfig,
}

impl SystemConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            ConfigError::Parse(_, err) => ConfigError::Parse(path.display().to_string(), err),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse("<inline>".into(), e))
    }

    /// The configuration shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_CONFIG_JSON).expect("bundled configuration is valid")
    }

    pub fn module(&self, name: &str) -> Option<&ModuleConfig> {
        self.modules.iter().find(|m| m.name == name)
    }

    fn power_of<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T, ConfigError> {
        match self.module(name) {
            None => Ok(T::default()),
            Some(m) if m.power.is_null() => Ok(T::default()),
            Some(m) => serde_json::from_value(m.power.clone()).map_err(|e| ConfigError::Module {
                module: name.to_owned(),
                message: e.to_string(),
            }),
        }
    }

    pub fn platform(&self) -> Result<PlatformParams, ConfigError> {
        let p = PlatformParams {
            camera: self.power_of("camera")?,
            soc: self.power_of("soc")?,
            motors: self.power_of("motors")?,
            avionics: self.power_of("avionics")?,
            bus: self.power_of("bus")?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub rail_volts: f64,
    #[serde(rename = "active_mA")]
    pub active_ma: f64,
    #[serde(rename = "idle_mA")]
    pub idle_ma: f64,
    pub fps: f64,
    pub converter_efficiency: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        CameraParams {
            rail_volts: 2.8,
            active_ma: 1.75,
            idle_ma: 0.14,
            fps: 60.0,
            converter_efficiency: 0.9,
        }
    }
}

impl CameraParams {
    /// One frame period, rounded to the nearest microsecond.
    pub fn frame_period_us(&self) -> u64 {
        (1e6 / self.fps).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocParams {
    pub clock_mhz: f64,
    pub rail_volts: f64,
    pub converter_efficiency: f64,
    /// Power state name to current in mA at the rail voltage.
    #[serde(rename = "states_mA")]
    pub states_ma: BTreeMap<String, f64>,
    /// Task name to cycle cost.
    pub tasks: BTreeMap<String, u64>,
}

impl Default for SocParams {
    fn default() -> Self {
        SocParams {
            clock_mhz: 100.0,
            rail_volts: 1.8,
            converter_efficiency: 0.9,
            states_ma: [("active".to_owned(), 25.0), ("idle".to_owned(), 1.0)].into(),
            tasks: [("cnn_inference".to_owned(), 1_000_000)].into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotorParams {
    /// Airframe, AI deck and fixed payload; the battery is added per run.
    pub body_mass_g: f64,
    pub air_density: f64,
    pub rotor_count: u32,
    pub rotor_diameter_m: f64,
    pub figure_of_merit: f64,
    pub eta_propel: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        MotorParams {
            body_mass_g: 50.9,
            air_density: 1.225,
            rotor_count: 4,
            rotor_diameter_m: 0.045,
            figure_of_merit: CALIBRATED_FIGURE_OF_MERIT,
            eta_propel: 0.7,
        }
    }
}

impl MotorParams {
    pub fn model(&self, battery_mass_g: f64) -> MotorPowerModel {
        MotorPowerModel {
            body_mass_kg: self.body_mass_g * 1e-3,
            battery_mass_kg: battery_mass_g * 1e-3,
            air_density: self.air_density,
            rotor_disk_area_m2: rotor_disk_area(self.rotor_count, self.rotor_diameter_m),
            figure_of_merit: self.figure_of_merit,
            eta_propel: self.eta_propel,
            g: GRAVITY,
        }
    }
}

/// Always-on flight-controller electronics (MCU, radio, IMU).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvionicsParams {
    pub rail_volts: f64,
    #[serde(rename = "current_mA")]
    pub current_ma: f64,
    pub converter_efficiency: f64,
}

impl Default for AvionicsParams {
    fn default() -> Self {
        AvionicsParams {
            rail_volts: 3.0,
            current_ma: 100.0,
            converter_efficiency: 0.9,
        }
    }
}

/// Functional-bus timing and the peripheral memory map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusParams {
    pub latency_us: u64,
    pub camera_status_addr: u64,
    pub frame_buffer_addr: u64,
    pub motor_addr: u64,
}

impl Default for BusParams {
    fn default() -> Self {
        BusParams {
            latency_us: 1,
            camera_status_addr: 0x4000_0000,
            frame_buffer_addr: 0x4000_1000,
            motor_addr: 0x4001_0000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct PlatformParams {
    pub camera: CameraParams,
    pub soc: SocParams,
    pub motors: MotorParams,
    pub avionics: AvionicsParams,
    pub bus: BusParams,
}


impl PlatformParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("camera.fps", self.camera.fps)?;
        positive("camera.rail_volts", self.camera.rail_volts)?;
        positive("soc.clock_mhz", self.soc.clock_mhz)?;
        positive("soc.rail_volts", self.soc.rail_volts)?;
        positive("motors.body_mass_g", self.motors.body_mass_g)?;
        positive("motors.rotor_diameter_m", self.motors.rotor_diameter_m)?;
        positive("avionics.rail_volts", self.avionics.rail_volts)?;
        for (name, eff) in [
            ("camera", self.camera.converter_efficiency),
            ("soc", self.soc.converter_efficiency),
            ("avionics", self.avionics.converter_efficiency),
            ("motors.figure_of_merit", self.motors.figure_of_merit),
            ("motors.eta_propel", self.motors.eta_propel),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(ConfigError::Invalid(format!("{name} efficiency {eff} outside (0, 1]")));
            }
        }
        for state in ["active", "idle"] {
            if !self.soc.states_ma.contains_key(state) {
                return Err(ConfigError::Invalid(format!("soc power state `{state}` missing")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Turn rate at a yaw command of ±1. Slow on purpose: together with the
    /// unit predictor gain it sets how sluggishly the drone re-aims, which is
    /// what makes the hard scenario speed-sensitive.
    pub yaw_rate_max_rad_s: f64,
    /// Lateral displacement applied when the drone strikes the gate frame.
    pub skid_m: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            yaw_rate_max_rad_s: 0.045,
            skid_m: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub policy: PolicyKind,
    pub v_kmh: f64,
    pub scenario: String,
    pub soc_land_threshold: f64,
    pub cruise_altitude_m: f64,
    pub climb_rate_mps: f64,
    /// Straight flight after a traversal before the descent starts.
    pub exit_distance_m: f64,
    /// Once this share of the network input is gate, the heading is held.
    pub commit_dark_fraction: f64,
    pub predictor_gain: f64,
    pub adaptive: AdaptiveConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            policy: PolicyKind::Constant,
            v_kmh: 1.0,
            scenario: "easy".into(),
            soc_land_threshold: 0.10,
            cruise_altitude_m: 1.0,
            climb_rate_mps: 0.5,
            exit_distance_m: 0.3,
            commit_dark_fraction: 0.25,
            predictor_gain: 1.0,
            adaptive: AdaptiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub window: usize,
    pub v_max_kmh: f64,
    pub v_floor_kmh: f64,
    pub decrement_kmh: f64,
    pub threshold: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            window: 10,
            v_max_kmh: 1.0,
            v_floor_kmh: 0.1,
            decrement_kmh: 0.05,
            threshold: 0.3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let c = SystemConfig::from_json("{}").unwrap();
        assert_eq!(c.platform().unwrap(), PlatformParams::default());
        assert_eq!(c.mission, MissionConfig::default());
    }

    #[test]
    fn bundled_config_matches_code_defaults() {
        let c = SystemConfig::bundled();
        assert_eq!(c.platform().unwrap(), PlatformParams::default());
        assert_eq!(c.mission, MissionConfig::default());
        assert_eq!(c.world, WorldConfig::default());
    }

    #[test]
    fn module_power_overrides() {
        let c = SystemConfig::from_json(
            r#"{"modules":[{"name":"soc","power":{"clock_mhz":200,"tasks":{"cnn_inference":42}}}]}"#,
        )
        .unwrap();
        let p = c.platform().unwrap();
        assert_eq!(p.soc.clock_mhz, 200.0);
        assert_eq!(p.soc.tasks["cnn_inference"], 42);
        assert_eq!(p.soc.rail_volts, 1.8);
    }

    #[test]
    fn bad_module_power_is_reported() {
        let c = SystemConfig::from_json(r#"{"modules":[{"name":"camera","power":{"fps":"fast"}}]}"#)
            .unwrap();
        assert!(matches!(c.platform(), Err(ConfigError::Module { .. })));
        let c = SystemConfig::from_json(r#"{"modules":[{"name":"camera","power":{"fps":0}}]}"#)
            .unwrap();
        assert!(matches!(c.platform(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn frame_period_at_60_fps() {
        assert_eq!(CameraParams::default().frame_period_us(), 16_667);
    }
}
