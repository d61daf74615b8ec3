use std::path::Path;

use serde::{Deserialize, Serialize};

use super::battery::{BatteryModel, OcvCurve, DEFAULT_R_INT_OHM, DEFAULT_SELF_DISCHARGE_MA};
use super::EnergyError;

const DEFAULT_CATALOG: &str = include_str!("../../data/batteries.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub name: String,
    #[serde(rename = "capacity_mAh")]
    pub capacity_mah: f64,
    pub weight_g: f64,
    #[serde(default = "default_r_int")]
    pub r_int_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocv_anchors: Option<Vec<[f64; 2]>>,
    #[serde(
        rename = "self_discharge_mA",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub self_discharge_ma: Option<f64>,
}

fn default_r_int() -> f64 {
    DEFAULT_R_INT_OHM
}

impl BatterySpec {
    pub fn build(&self) -> Result<BatteryModel, EnergyError> {
        if !(self.capacity_mah > 0.0 && self.weight_g > 0.0 && self.r_int_ohm >= 0.0) {
            return Err(EnergyError::BadBattery(self.name.clone()));
        }
        let ocv_curve = match &self.ocv_anchors {
            Some(a) => OcvCurve::new(a.iter().map(|&[s, v]| (s, v)).collect())?,
            None => OcvCurve::default(),
        };
        Ok(BatteryModel {
            name: self.name.clone(),
            capacity_mah: self.capacity_mah,
            weight_g: self.weight_g,
            ocv_curve,
            r_int_ohm: self.r_int_ohm,
            soc: 1.0,
            self_discharge_ma: self.self_discharge_ma.unwrap_or(DEFAULT_SELF_DISCHARGE_MA),
        })
    }
}

/// Named battery packs available to experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryCatalog {
    specs: Vec<BatterySpec>,
}

impl BatteryCatalog {
    pub fn from_json(text: &str) -> Result<Self, EnergyError> {
        let specs: Vec<BatterySpec> =
            serde_json::from_str(text).map_err(|e| EnergyError::Catalog(e.to_string()))?;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(EnergyError::Catalog(format!("duplicate battery `{}`", s.name)));
            }
            s.build()?;
        }
        Ok(BatteryCatalog { specs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnergyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| EnergyError::Catalog(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, name: &str) -> Option<&BatterySpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn battery(&self, name: &str) -> Result<BatteryModel, EnergyError> {
        self.get(name)
            .ok_or_else(|| EnergyError::UnknownBattery(name.to_owned()))?
            .build()
    }

    pub fn specs(&self) -> &[BatterySpec] {
        &self.specs
    }

    pub fn heaviest(&self) -> Option<&BatterySpec> {
        self.specs.iter().max_by(|a, b| a.weight_g.total_cmp(&b.weight_g))
    }
}

impl Default for BatteryCatalog {
    fn default() -> Self {
        BatteryCatalog::from_json(DEFAULT_CATALOG).expect("bundled battery catalog is valid")
    }
}
