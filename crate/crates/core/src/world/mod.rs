//! World simulator: fixed-step drone kinematics, gates, camera rendering and
//! the opcode dispatch loop serving the virtual platform.

mod geometry;
mod physics;
mod render;
mod scenario;
mod server;

pub use geometry::{
    check_traversal, plane_crossing, GateSpec, PlaneCrossing, Traversal, Vec3,
    DRONE_HALF_HEIGHT_M, DRONE_HALF_WIDTH_M, GATE_OPENING_BOTTOM_M,
};
pub use physics::{physics_step, DroneState};
pub use render::{
    render_camera, to_camera, CameraIntrinsics, BACKGROUND, FRAME_HEIGHT, FRAME_WIDTH, GATE_SHADE,
};
pub use scenario::{PixelNoise, Scenario, StartPose, BUILTIN_SCENARIOS};
pub use server::{serve, spawn_server, LocalLink, RunningServer, WorldHandler, WorldServer};

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::WorldConfig;
use crate::image::GrayImage;
use crate::protocol::{Payload, Value};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("trajectory log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldEvent {
    Takeoff,
    Traversed,
    Collided,
    Missed,
    Landed,
}

impl fmt::Display for WorldEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorldEvent::Takeoff => "takeoff",
            WorldEvent::Traversed => "traversed",
            WorldEvent::Collided => "collided",
            WorldEvent::Missed => "missed",
            WorldEvent::Landed => "landed",
        })
    }
}

/// Mission-level observations accumulated by the world.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Telemetry {
    /// 3D path length flown.
    pub distance_m: f64,
    pub traversal_time_us: Option<u64>,
    pub traversed_gate: Option<usize>,
    pub collisions: u32,
    /// Forward pass of a gate plane without entering the gate.
    pub missed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub world_time_us: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub v_cmd: f64,
    pub event: String,
}

/// The simulated environment.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    config: WorldConfig,
    state: DroneState,
    time_us: u64,
    telemetry: Telemetry,
    trajectory: Vec<TrajectoryRow>,
    frames_rendered: u64,
}

impl World {
    pub fn new(scenario: Scenario, config: WorldConfig) -> Self {
        let state = DroneState::at(scenario.start.position, scenario.start.heading_rad);
        let mut world = World {
            scenario,
            config,
            state,
            time_us: 0,
            telemetry: Telemetry::default(),
            trajectory: Vec::new(),
            frames_rendered: 0,
        };
        world.log(None);
        world
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn state(&self) -> &DroneState {
        &self.state
    }

    pub fn time_us(&self) -> u64 {
        self.time_us
    }

    pub fn step_us(&self) -> u64 {
        self.scenario.world_step_us
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    pub fn frames_rendered(&self) -> u64 {
        self.frames_rendered
    }

    pub fn set_commands(&mut self, v_mps: f64, yaw_rate: f64, vz_mps: f64) {
        self.state.v_cmd_mps = v_mps;
        self.state.yaw_rate_cmd = yaw_rate;
        self.state.vz_cmd_mps = vz_mps;
    }

    pub fn render(&mut self) -> GrayImage {
        self.frames_rendered += 1;
        render_camera(&self.state, &self.scenario)
    }

    fn log(&mut self, event: Option<WorldEvent>) {
        self.trajectory.push(TrajectoryRow {
            world_time_us: self.time_us,
            x: self.state.position[0],
            y: self.state.position[1],
            z: self.state.position[2],
            heading: self.state.heading_rad,
            v_cmd: self.state.v_cmd_mps,
            event: event.map(|e| e.to_string()).unwrap_or_default(),
        });
    }

    /// One physics tick, including gate interaction.
    pub fn step(&mut self) -> Option<WorldEvent> {
        let prev = self.state.clone();
        let mut next = physics_step(&prev, self.step_us(), self.config.yaw_rate_max_rad_s);
        let mut event = None;
        for (i, gate) in self.scenario.gates.iter().enumerate() {
            match check_traversal(prev.position, next.position, gate) {
                Traversal::Traversed => {
                    if self.telemetry.traversal_time_us.is_none() {
                        self.telemetry.traversal_time_us = Some(self.time_us + self.step_us());
                        self.telemetry.traversed_gate = Some(i);
                    }
                    event = Some(WorldEvent::Traversed);
                }
                Traversal::Collided => {
                    next.position = skid(&prev.position, gate, self.config.skid_m);
                    self.telemetry.collisions += 1;
                    event = Some(WorldEvent::Collided);
                }
                Traversal::None => {
                    if plane_crossing(prev.position, next.position, gate)
                        .is_some_and(|c| c.forward)
                    {
                        self.telemetry.missed = true;
                        event = Some(WorldEvent::Missed);
                    }
                }
            }
            if event.is_some() {
                break;
            }
        }
        if event.is_none() {
            if !prev.airborne && next.airborne {
                event = Some(WorldEvent::Takeoff);
            } else if prev.airborne && !next.airborne {
                event = Some(WorldEvent::Landed);
            }
        }
        let d = geometry::sub(next.position, prev.position);
        self.telemetry.distance_m += geometry::norm(d);
        self.state = next;
        self.time_us += self.step_us();
        self.log(event);
        event
    }

    pub fn advance(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
    }

    pub fn state_payload(&self) -> Payload {
        let s = &self.state;
        let t = &self.telemetry;
        let mut p = Payload::new();
        p.insert("x".into(), Value::Float(s.position[0]));
        p.insert("y".into(), Value::Float(s.position[1]));
        p.insert("z".into(), Value::Float(s.position[2]));
        p.insert("heading_rad".into(), Value::Float(s.heading_rad));
        p.insert("v_cmd_mps".into(), Value::Float(s.v_cmd_mps));
        p.insert("yaw_rate_cmd".into(), Value::Float(s.yaw_rate_cmd));
        p.insert("vz_cmd_mps".into(), Value::Float(s.vz_cmd_mps));
        p.insert("airborne".into(), Value::Bool(s.airborne));
        p.insert("distance_m".into(), Value::Float(t.distance_m));
        p.insert("collisions".into(), Value::Int(t.collisions as i64));
        p.insert("missed".into(), Value::Bool(t.missed));
        p.insert("traversed".into(), Value::Bool(t.traversal_time_us.is_some()));
        if let Some(ts) = t.traversal_time_us {
            p.insert("traversal_time_us".into(), Value::Int(ts as i64));
        }
        p.insert("world_time_us".into(), Value::Int(self.time_us as i64));
        p
    }

    pub fn write_trajectory(&self, path: &Path) -> Result<(), WorldError> {
        let err = |e: &dyn fmt::Display| WorldError::Log(format!("{}: {e}", path.display()));
        let file = std::fs::File::create(path).map_err(|e| err(&e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        for row in &self.trajectory {
            w.serialize(row).map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))?;
        w.into_inner()
            .map_err(|e| err(&e))?
            .flush()
            .map_err(|e| err(&e))
    }
}

/// Pushes the airframe sideways off the frame it struck: towards the opening
/// when the hit is on the inner half of the border, outwards otherwise.
fn skid(prev: &Vec3, gate: &GateSpec, skid_m: f64) -> Vec3 {
    let local = gate.local(*prev);
    let mid_border = (gate.opening_m + gate.frame_outer_m) / 4.0;
    let side = if local[1] >= 0.0 { 1.0 } else { -1.0 };
    let direction = if local[1].abs() < mid_border { -side } else { side };
    let l = gate.lateral();
    [
        prev[0] + direction * skid_m * l[0],
        prev[1] + direction * skid_m * l[1],
        prev[2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(name: &str) -> World {
        World::new(Scenario::builtin(name).unwrap(), WorldConfig::default())
    }

    #[test]
    fn fresh_world_at_start_pose() {
        let w = world("easy");
        assert_eq!(w.state().position, w.scenario().start.position);
        assert_eq!(w.time_us(), 0);
        assert_eq!(w.trajectory().len(), 1);
    }

    #[test]
    fn straight_flight_through_easy_gate() {
        let mut w = world("easy");
        let g = w.scenario().gates[0].clone();
        w.state.position = [0.0, g.center[1], 1.0];
        w.state.airborne = true;
        w.set_commands(1.0, 0.0, 0.0);
        for _ in 0..200 {
            w.step();
        }
        assert!(w.telemetry().traversal_time_us.is_some());
        assert_eq!(w.telemetry().collisions, 0);
        assert!(!w.telemetry().missed);
    }

    #[test]
    fn clipping_the_post_skids_inwards_then_traverses() {
        let mut w = world("easy");
        let g = w.scenario().gates[0].clone();
        w.state.position = [g.center[0] - 0.5, g.center[1] + 0.18, 1.0];
        w.state.airborne = true;
        w.set_commands(0.3, 0.0, 0.0);
        let mut events = Vec::new();
        for _ in 0..200 {
            if let Some(e) = w.step() {
                events.push(e);
            }
        }
        assert_eq!(events.first(), Some(&WorldEvent::Collided));
        assert!(events.contains(&WorldEvent::Traversed));
        assert!(!events.contains(&WorldEvent::Missed));
    }

    #[test]
    fn passing_beside_the_gate_is_a_miss() {
        let mut w = world("easy");
        let g = w.scenario().gates[0].clone();
        w.state.position = [0.0, g.center[1] + 1.0, 1.0];
        w.state.airborne = true;
        w.set_commands(1.0, 0.0, 0.0);
        for _ in 0..200 {
            w.step();
        }
        assert!(w.telemetry().missed);
        assert!(w.telemetry().traversal_time_us.is_none());
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let mut w = world("open");
        w.advance(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        w.write_trajectory(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "world_time_us,x,y,z,heading,v_cmd,event");
        assert_eq!(lines.count(), 4);
    }
}
