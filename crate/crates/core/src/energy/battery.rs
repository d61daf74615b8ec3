
use super::EnergyError;

/// µs·mA in one mAh.
const US_MA_PER_MAH: f64 = 3.6e9;

/// Generic single-cell LiPo open-circuit voltage shape, (soc, volts).
pub const DEFAULT_OCV_ANCHORS: [(f64, f64); 5] =
    [(0.0, 3.00), (0.2, 3.70), (0.5, 3.80), (0.8, 3.95), (1.0, 4.20)];

pub const DEFAULT_R_INT_OHM: f64 = 0.2;
pub const DEFAULT_SELF_DISCHARGE_MA: f64 = 0.05;

/// Piecewise-linear state-of-charge to open-circuit-voltage map.
#[derive(Debug, Clone, PartialEq)]
pub struct OcvCurve {
    /// Sorted by soc, spanning exactly [0, 1].
    anchors: Vec<(f64, f64)>,
}

impl OcvCurve {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self, EnergyError> {
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bad = |why: &str| Err(EnergyError::BadCurve(why.to_owned()));
        if anchors.len() < 2 {
            return bad("need at least two anchors");
        }
        if anchors[0].0 != 0.0 || anchors[anchors.len() - 1].0 != 1.0 {
            return bad("anchors must span soc 0..1");
        }
        for w in anchors.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("duplicate soc anchor");
            }
            if w[1].1 < w[0].1 {
                return bad("voltage must not decrease with soc");
            }
        }
        if anchors.iter().any(|&(_, v)| !(v > 0.0 && v.is_finite())) {
            return bad("voltages must be positive");
        }
        Ok(OcvCurve { anchors })
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn ocv(&self, soc: f64) -> Result<f64, EnergyError> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(EnergyError::SocOutOfRange(soc));
        }
        let i = self
            .anchors
            .partition_point(|&(s, _)| s <= soc)
            .clamp(1, self.anchors.len() - 1);
        let (s0, v0) = self.anchors[i - 1];
        let (s1, v1) = self.anchors[i];
        Ok(v0 + (v1 - v0) * (soc - s0) / (s1 - s0))
    }
}

impl Default for OcvCurve {
    fn default() -> Self {
        OcvCurve {
            anchors: DEFAULT_OCV_ANCHORS.to_vec(),
        }
    }
}

/// Zeroth-order equivalent circuit: OCV source in series with a resistance,
/// with coulomb counting for the state of charge.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryModel {
    pub name: String,
    pub capacity_mah: f64,
    pub weight_g: f64,
    pub ocv_curve: OcvCurve,
    pub r_int_ohm: f64,
    pub soc: f64,
    pub self_discharge_ma: f64,
}

/// Outcome of one coulomb-counting step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub soc: f64,
    pub v_terminal: f64,
}

impl BatteryModel {
    pub fn new(name: &str, capacity_mah: f64, weight_g: f64) -> Self {
        BatteryModel {
            name: name.to_owned(),
            capacity_mah,
            weight_g,
            ocv_curve: OcvCurve::default(),
            r_int_ohm: DEFAULT_R_INT_OHM,
            soc: 1.0,
            self_discharge_ma: DEFAULT_SELF_DISCHARGE_MA,
        }
    }

    pub fn ocv(&self, soc: f64) -> Result<f64, EnergyError> {
        self.ocv_curve.ocv(soc)
    }

    pub fn is_exhausted(&self) -> bool {
        self.soc <= 0.0
    }

    /// Drains `i_load_ma` (plus self-discharge) for `dt_us`.
    pub fn step(&mut self, i_load_ma: f64, dt_us: u64) -> Result<BatteryStep, EnergyError> {
        if self.is_exhausted() {
            return Err(EnergyError::BatteryExhausted(self.name.clone()));
        }
        let drawn = (i_load_ma + self.self_discharge_ma) * dt_us as f64;
        self.soc = (self.soc - drawn / (US_MA_PER_MAH * self.capacity_mah)).clamp(0.0, 1.0);
        let v_terminal = self.ocv(self.soc)? - i_load_ma * 1e-3 * self.r_int_ohm;
        Ok(BatteryStep {
            soc: self.soc,
            v_terminal,
        })
    }
}
