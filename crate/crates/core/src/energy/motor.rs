use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;
pub const SEA_LEVEL_AIR_DENSITY: f64 = 1.225;

/// Figure of merit fitted so that a hover-until-10% mission on the stock
/// 250 mAh / 7.1 g pack lasts 410 s with the default platform. Re-derive with
/// `cosim calibrate` after changing any default load.
pub const CALIBRATED_FIGURE_OF_MERIT: f64 = 0.5306;

/// Aggregate electrical power of the four motors.
///
/// Hover power follows actuator-disk momentum theory divided by a figure of
/// merit; propulsion power is the work against weight at cruise speed scaled
/// by the drivetrain efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorPowerModel {
    /// Airframe plus AI deck, without battery.
    pub body_mass_kg: f64,
    pub battery_mass_kg: f64,
    pub air_density: f64,
    /// Total swept area of all rotors.
    pub rotor_disk_area_m2: f64,
    pub figure_of_merit: f64,
    pub eta_propel: f64,
    pub g: f64,
}

impl MotorPowerModel {
    pub fn mass_total_kg(&self) -> f64 {
        self.body_mass_kg + self.battery_mass_kg
    }

    pub fn with_battery_mass(mut self, battery_mass_kg: f64) -> Self {
        self.battery_mass_kg = battery_mass_kg;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.mass_total_kg() > 0.0
            && self.air_density > 0.0
            && self.rotor_disk_area_m2 > 0.0
            && self.figure_of_merit > 0.0
            && self.figure_of_merit <= 1.0
            && self.eta_propel > 0.0
            && self.eta_propel <= 1.0
            && self.g > 0.0
    }

    pub fn p_hover(&self) -> f64 {
        let weight = self.mass_total_kg() * self.g;
        (weight.powi(3) / (2.0 * self.air_density * self.rotor_disk_area_m2)).sqrt()
            / self.figure_of_merit
    }

    pub fn p_propel(&self, v_mps: f64) -> f64 {
        self.mass_total_kg() * self.g * v_mps / self.eta_propel
    }

    /// Motor draw in watts; nothing when the drone is on the ground.
    pub fn total_motor_power(&self, v_mps: f64, airborne: bool) -> f64 {
        if airborne {
            self.p_hover() + self.p_propel(v_mps)
        } else {
            0.0
        }
    }
}

/// Swept area of `count` rotors of the given diameter.
pub fn rotor_disk_area(count: u32, diameter_m: f64) -> f64 {
    let r = diameter_m / 2.0;
    count as f64 * std::f64::consts::PI * r * r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mass: f64, fm: f64) -> MotorPowerModel {
        MotorPowerModel {
            body_mass_kg: mass,
            battery_mass_kg: 0.0,
            air_density: 1.225,
            rotor_disk_area_m2: 6.36e-3,
            figure_of_merit: fm,
            eta_propel: 0.7,
            g: GRAVITY,
        }
    }

    #[test]
    fn hover_reference_point() {
        // sqrt((0.0385*9.81)^3 / (2*1.225*6.36e-3)) / 0.25, evaluated by hand.
        let p = model(0.0385, 0.25).p_hover();
        assert!((p - 7.438).abs() < 0.01, "{p}");
    }

    #[test]
    fn hover_limits_and_scaling() {
        assert!(model(1e-9, 0.5).p_hover() < 1e-9);
        let mut prev = 0.0;
        for g in 1..200 {
            let p = model(g as f64 * 1e-3, 0.5).p_hover();
            assert!(p > prev);
            prev = p;
        }
        let a = model(0.05, 0.3).p_hover();
        let b = model(0.05, 0.6).p_hover();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn propel_reference_and_linearity() {
        let m = model(0.0385, 0.25);
        assert_eq!(m.p_propel(0.0), 0.0);
        let p = m.p_propel(0.417);
        assert!((p - 0.2250).abs() < 5e-4, "{p}");
        assert!((m.p_propel(0.834) - 2.0 * p).abs() < 1e-15);
    }

    #[test]
    fn total_power_by_flight_state() {
        let m = model(0.04, 0.5);
        assert_eq!(m.total_motor_power(0.3, false), 0.0);
        assert_eq!(m.total_motor_power(0.0, true), m.p_hover());
        assert_eq!(m.total_motor_power(0.3, true), m.p_hover() + m.p_propel(0.3));
    }

    #[test]
    fn four_45mm_rotors() {
        assert!((rotor_disk_area(4, 0.045) - 6.3617e-3).abs() < 1e-7);
    }
}
