//! Extra-functional models: motor power, battery, converters and the power bus.

mod battery;
mod bus;
mod catalog;
mod motor;

pub use battery::{
    BatteryModel, BatteryStep, OcvCurve, DEFAULT_OCV_ANCHORS, DEFAULT_R_INT_OHM,
    DEFAULT_SELF_DISCHARGE_MA,
};
pub use bus::{BusStep, ConverterModel, Demand, Load, PowerBus, BATTERY_RAIL};
pub use catalog::{BatteryCatalog, BatterySpec};
pub use motor::{
    rotor_disk_area, MotorPowerModel, CALIBRATED_FIGURE_OF_MERIT, GRAVITY, SEA_LEVEL_AIR_DENSITY,
};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("battery `{0}` is exhausted")]
    BatteryExhausted(String),
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("invalid OCV curve: {0}")]
    BadCurve(String),
    #[error("converter efficiency {0} outside (0, 1]")]
    BadEfficiency(f64),
    #[error("no converter for rail `{0}`")]
    NoConverter(String),
    #[error("no load `{0}` on the bus")]
    UnknownLoad(String),
    #[error("power bus did not converge for a {demand_w} W demand")]
    NoConvergence { demand_w: f64 },
    #[error("invalid battery parameters for `{0}`")]
    BadBattery(String),
    #[error("unknown battery `{0}`")]
    UnknownBattery(String),
    #[error("battery catalog: {0}")]
    Catalog(String),
}

/// Battery-side energy per component, accumulated over solved bus steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub components_j: BTreeMap<String, f64>,
    /// Terminal-voltage × output-current energy actually delivered.
    pub battery_output_j: f64,
    /// Charge drawn including self-discharge.
    pub charge_mah: f64,
    pub elapsed_us: u64,
}

impl EnergyLedger {
    pub fn record(&mut self, step: &BusStep) {
        let dt_s = step.dt_us as f64 * 1e-6;
        for (id, p) in &step.load_input_w {
            *self.components_j.entry(id.clone()).or_insert(0.0) += p * dt_s;
        }
        self.battery_output_j += step.output_power_w() * dt_s;
        self.charge_mah += step.battery_current_ma * step.dt_us as f64 / 3.6e9;
        self.elapsed_us += step.dt_us;
    }

    pub fn component_j(&self, id: &str) -> f64 {
        self.components_j.get(id).copied().unwrap_or(0.0)
    }

    pub fn total_component_j(&self) -> f64 {
        self.components_j.values().sum()
    }

    pub fn share(&self, id: &str) -> f64 {
        let total = self.total_component_j();
        if total > 0.0 {
            self.component_j(id) / total
        } else {
            0.0
        }
    }
}
