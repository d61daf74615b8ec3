use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geometry::Vec3;

/// Kinematic drone state. Heading is measured from +x towards +y, so a
/// positive yaw command turns right in the camera image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vec3,
    pub heading_rad: f64,
    pub v_cmd_mps: f64,
    pub yaw_rate_cmd: f64,
    pub vz_cmd_mps: f64,
    pub airborne: bool,
}

impl DroneState {
    pub fn at(position: Vec3, heading_rad: f64) -> Self {
        DroneState {
            position,
            heading_rad,
            v_cmd_mps: 0.0,
            yaw_rate_cmd: 0.0,
            vz_cmd_mps: 0.0,
            airborne: position[2] > 0.0,
        }
    }

    fn grounded(&self) -> bool {
        !self.airborne && self.vz_cmd_mps <= 0.0
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a == -PI {
        a = PI;
    }
    a
}

/// Advances the kinematic model by `dt_us`.
pub fn physics_step(state: &DroneState, dt_us: u64, yaw_rate_max_rad_s: f64) -> DroneState {
    let mut next = state.clone();
    if state.grounded() {
        return next;
    }
    let dt = dt_us as f64 * 1e-6;
    if state.yaw_rate_cmd != 0.0 {
        next.heading_rad =
            wrap_angle(state.heading_rad + state.yaw_rate_cmd * yaw_rate_max_rad_s * dt);
    }
    let (s, c) = next.heading_rad.sin_cos();
    next.position[0] += state.v_cmd_mps * c * dt;
    next.position[1] += state.v_cmd_mps * s * dt;
    next.position[2] += state.vz_cmd_mps * dt;
    if next.position[2] <= 0.0 {
        next.position[2] = 0.0;
        if state.vz_cmd_mps <= 0.0 {
            // Touchdown: motors idle, nothing moves until the next climb command.
            next.airborne = false;
            next.v_cmd_mps = 0.0;
            next.yaw_rate_cmd = 0.0;
            next.vz_cmd_mps = 0.0;
        }
    } else {
        next.airborne = true;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cruising(v: f64) -> DroneState {
        let mut s = DroneState::at([0.0, 0.0, 1.0], 0.0);
        s.v_cmd_mps = v;
        s
    }

    fn run(mut s: DroneState, seconds: f64) -> DroneState {
        let steps = (seconds * 1e6 / 32_000.0).round() as usize;
        for _ in 0..steps {
            s = physics_step(&s, 32_000, 1.0);
        }
        s
    }

    #[test]
    fn cruise_distance_over_twenty_seconds() {
        let a = run(cruising(0.2 / 3.6), 20.0);
        let b = run(cruising(0.1 / 3.6), 20.0);
        assert!((a.position[0] - 1.111).abs() < 0.011, "{}", a.position[0]);
        assert!((a.position[0] / b.position[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_command_is_identity() {
        let s = DroneState::at([1.0, 2.0, 1.0], 0.3);
        assert_eq!(physics_step(&s, 32_000, 1.0), s);
        let ground = DroneState::at([1.0, 2.0, 0.0], 0.3);
        let mut moving = ground.clone();
        moving.v_cmd_mps = 1.0;
        moving.yaw_rate_cmd = 1.0;
        assert_eq!(physics_step(&moving, 32_000, 1.0).position, ground.position);
    }

    #[test]
    fn negative_yaw_turns_left() {
        let mut s = cruising(0.278);
        s.yaw_rate_cmd = -0.12;
        let s = run(s, 1.0);
        assert!(s.heading_rad < 0.0);
        assert!(s.position[1] < 0.0);
        assert!(s.position[0] > 0.25);
    }

    #[test]
    fn takeoff_and_touchdown() {
        let mut s = DroneState::at([0.0, 0.0, 0.0], 0.0);
        s.vz_cmd_mps = 0.5;
        let s = run(s, 1.6);
        assert!(s.airborne);
        assert!((s.position[2] - 0.8).abs() < 1e-9);
        let mut s = s;
        s.vz_cmd_mps = -0.5;
        s.v_cmd_mps = 0.1;
        let s = run(s, 2.0);
        assert!(!s.airborne);
        assert_eq!(s.position[2], 0.0);
        assert_eq!((s.v_cmd_mps, s.vz_cmd_mps, s.yaw_rate_cmd), (0.0, 0.0, 0.0));
    }

    #[test]
    fn heading_wraps() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
    }
}
