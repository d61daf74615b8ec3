use std::collections::BTreeMap;

use super::battery::{BatteryModel, BatteryStep};
use super::EnergyError;

/// Rail name for loads wired straight to the battery (no converter).
pub const BATTERY_RAIL: &str = "battery";

const MAX_ITERATIONS: usize = 20;
/// Fixed-point tolerance on the battery current, in amperes (1 µA).
const CURRENT_TOLERANCE_A: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterModel {
    pub efficiency: f64,
}

impl ConverterModel {
    pub fn new(efficiency: f64) -> Result<Self, EnergyError> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(EnergyError::BadEfficiency(efficiency));
        }
        Ok(ConverterModel { efficiency })
    }

    pub fn input_power(&self, p_out: f64) -> f64 {
        p_out / self.efficiency
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    CurrentMa(f64),
    PowerMw(f64),
}

/// One consumer on the power bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub rail: String,
    pub rail_volts: f64,
    pub demand: Demand,
}

impl Load {
    pub fn power_w(&self) -> f64 {
        match self.demand {
            Demand::CurrentMa(ma) => ma * 1e-3 * self.rail_volts,
            Demand::PowerMw(mw) => mw * 1e-3,
        }
    }
}

/// Result of one bus solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BusStep {
    /// Current delivered to the loads, mA.
    pub output_current_ma: f64,
    /// Output current plus self-discharge, mA.
    pub battery_current_ma: f64,
    /// Terminal voltage the solve converged on, V.
    pub v_terminal: f64,
    /// Battery-side power per load (after converter losses), W.
    pub load_input_w: Vec<(String, f64)>,
    pub dt_us: u64,
    pub battery: BatteryStep,
    pub iterations: usize,
}

impl BusStep {
    pub fn output_power_w(&self) -> f64 {
        self.v_terminal * self.output_current_ma * 1e-3
    }

    pub fn demanded_power_w(&self) -> f64 {
        self.load_input_w.iter().map(|(_, p)| p).sum()
    }
}

/// Loads fed from one battery through per-rail DC/DC converters.
#[derive(Debug, Clone)]
pub struct PowerBus {
    loads: BTreeMap<String, Load>,
    converters: BTreeMap<String, ConverterModel>,
    battery: BatteryModel,
}

impl PowerBus {
    pub fn new(battery: BatteryModel) -> Self {
        PowerBus {
            loads: BTreeMap::new(),
            converters: BTreeMap::new(),
            battery,
        }
    }

    pub fn battery(&self) -> &BatteryModel {
        &self.battery
    }

    pub fn battery_mut(&mut self) -> &mut BatteryModel {
        &mut self.battery
    }

    pub fn add_converter(&mut self, rail: &str, converter: ConverterModel) {
        self.converters.insert(rail.to_owned(), converter);
    }

    pub fn converter(&self, rail: &str) -> Option<&ConverterModel> {
        self.converters.get(rail)
    }

    pub fn set_load(&mut self, id: &str, load: Load) {
        match self.loads.get_mut(id) {
            Some(slot) => *slot = load,
            None => {
                self.loads.insert(id.to_owned(), load);
            }
        }
    }

    pub fn set_demand(&mut self, id: &str, demand: Demand) -> Result<(), EnergyError> {
        let load = self
            .loads
            .get_mut(id)
            .ok_or_else(|| EnergyError::UnknownLoad(id.to_owned()))?;
        load.demand = demand;
        Ok(())
    }

    pub fn remove_load(&mut self, id: &str) -> Option<Load> {
        self.loads.remove(id)
    }

    pub fn loads(&self) -> impl Iterator<Item = (&str, &Load)> {
        self.loads.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn input_power(&self, load: &Load) -> Result<f64, EnergyError> {
        let p = load.power_w();
        if load.rail == BATTERY_RAIL {
            return Ok(p);
        }
        let conv = self
            .converters
            .get(&load.rail)
            .ok_or_else(|| EnergyError::NoConverter(load.rail.clone()))?;
        Ok(conv.input_power(p))
    }

    /// Finds the battery current that delivers the loads' input power at the
    /// resulting terminal voltage, then discharges the battery for `dt_us`.
    pub fn solve(&mut self, dt_us: u64) -> Result<BusStep, EnergyError> {
        if self.battery.is_exhausted() {
            return Err(EnergyError::BatteryExhausted(self.battery.name.clone()));
        }
        let load_input_w = self
            .loads
            .iter()
            .map(|(id, l)| Ok((id.clone(), self.input_power(l)?)))
            .collect::<Result<Vec<_>, EnergyError>>()?;
        let demand: f64 = load_input_w.iter().map(|(_, p)| p).sum();
        let ocv = self.battery.ocv(self.battery.soc)?;
        let r = self.battery.r_int_ohm;

        let mut current = demand / ocv;
        let mut iterations = 0;
        let mut converged = demand == 0.0;
        while !converged && iterations < MAX_ITERATIONS {
            iterations += 1;
            let v = ocv - current * r;
            if v <= 0.0 {
                return Err(EnergyError::NoConvergence { demand_w: demand });
            }
            let next = demand / v;
            converged = (next - current).abs() < CURRENT_TOLERANCE_A;
            current = next;
        }
        if !converged {
            return Err(EnergyError::NoConvergence { demand_w: demand });
        }
        let v_terminal = ocv - current * r;
        let output_current_ma = current * 1e3;
        let battery = self.battery.step(output_current_ma, dt_us)?;
        Ok(BusStep {
            output_current_ma,
            battery_current_ma: output_current_ma + self.battery.self_discharge_ma,
            v_terminal,
            load_input_w,
            dt_us,
            battery,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battery(r_int: f64, self_discharge: f64) -> BatteryModel {
        let mut b = BatteryModel::new("test", 250.0, 7.1);
        b.r_int_ohm = r_int;
        b.self_discharge_ma = self_discharge;
        b
    }

    #[test]
    fn no_loads_draws_only_self_discharge() {
        let mut bus = PowerBus::new(battery(0.2, 0.05));
        let s = bus.solve(1000).unwrap();
        assert_eq!(s.output_current_ma, 0.0);
        assert_eq!(s.battery_current_ma, 0.05);
    }

    #[test]
    fn ideal_cell_closed_form() {
        let mut bus = PowerBus::new(battery(0.0, 0.0));
        bus.add_converter("3v0", ConverterModel::new(0.9).unwrap());
        bus.set_load(
            "x",
            Load {
                rail: "3v0".into(),
                rail_volts: 3.0,
                demand: Demand::PowerMw(1000.0),
            },
        );
        let ocv = bus.battery().ocv(1.0).unwrap();
        let s = bus.solve(1000).unwrap();
        let expected_ma = (1.0 / 0.9) / ocv * 1e3;
        assert!((s.output_current_ma - expected_ma).abs() < 1e-9);
    }

    #[test]
    fn internal_resistance_raises_current() {
        let load = Load {
            rail: BATTERY_RAIL.into(),
            rail_volts: 3.7,
            demand: Demand::PowerMw(7000.0),
        };
        let mut ideal = PowerBus::new(battery(0.0, 0.0));
        ideal.set_load("m", load.clone());
        let mut lossy = PowerBus::new(battery(0.2, 0.0));
        lossy.set_load("m", load);
        assert!(lossy.solve(1).unwrap().output_current_ma > ideal.solve(1).unwrap().output_current_ma);
    }

    #[test]
    fn energy_balances_per_step() {
        let mut bus = PowerBus::new(battery(0.25, 0.05));
        bus.add_converter("1v8", ConverterModel::new(0.9).unwrap());
        bus.set_load(
            "soc",
            Load {
                rail: "1v8".into(),
                rail_volts: 1.8,
                demand: Demand::CurrentMa(25.0),
            },
        );
        bus.set_load(
            "motors",
            Load {
                rail: BATTERY_RAIL.into(),
                rail_volts: 3.7,
                demand: Demand::PowerMw(6800.0),
            },
        );
        for _ in 0..100 {
            let s = bus.solve(26_667).unwrap();
            let rel = (s.output_power_w() - s.demanded_power_w()).abs() / s.demanded_power_w();
            assert!(rel < 1e-6, "{rel}");
        }
    }

    #[test]
    fn missing_converter_and_bad_efficiency() {
        assert!(ConverterModel::new(0.0).is_err());
        assert!(ConverterModel::new(1.1).is_err());
        let mut bus = PowerBus::new(battery(0.2, 0.0));
        bus.set_load(
            "x",
            Load {
                rail: "5v".into(),
                rail_volts: 5.0,
                demand: Demand::CurrentMa(1.0),
            },
        );
        assert!(matches!(bus.solve(1), Err(EnergyError::NoConverter(_))));
    }

    #[test]
    fn pathological_resistance_fails_to_converge() {
        let mut bus = PowerBus::new(battery(50.0, 0.0));
        bus.set_load(
            "m",
            Load {
                rail: BATTERY_RAIL.into(),
                rail_volts: 3.7,
                demand: Demand::PowerMw(7000.0),
            },
        );
        assert!(matches!(bus.solve(1), Err(EnergyError::NoConvergence { .. })));
    }
}
