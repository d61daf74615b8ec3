//! On-board mission software: phase machine, yaw predictor and speed policy.

mod perception;

pub use perception::{
    downsample, resample, InferenceHook, PredictorMode, YawPredictor, DARK_THRESHOLD, NET_INPUT,
};

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::config::{AdaptiveConfig, MissionConfig, PolicyKind};
use crate::vp::{CameraStatus, VirtualPlatform, VpError};

pub const INFERENCE_TASK: &str = "cnn_inference";

pub fn kmh_to_mps(v: f64) -> f64 {
    v / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum MissionPhase {
    Takeoff,
    Cruise,
    Land,
    Done,
}

impl fmt::Display for MissionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Speed adaptation from the recent yaw predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivePolicyState {
    history: VecDeque<f64>,
    window: usize,
    v_current_kmh: f64,
    config: AdaptiveConfig,
}

impl AdaptivePolicyState {
    pub fn new(config: AdaptiveConfig) -> Self {
        AdaptivePolicyState {
            history: VecDeque::with_capacity(config.window),
            window: config.window.max(1),
            v_current_kmh: config.v_max_kmh,
            config,
        }
    }

    pub fn v_current_kmh(&self) -> f64 {
        self.v_current_kmh
    }

    pub fn history(&self) -> impl Iterator<Item = &f64> {
        self.history.iter()
    }

    /// Feeds one prediction and returns the new speed in km/h. Until the
    /// window fills, the average runs over what is there.
    pub fn update(&mut self, yaw: f64) -> f64 {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(yaw);
        let avg = self.history.iter().sum::<f64>() / self.history.len() as f64;
        self.v_current_kmh = if avg.abs() <= self.config.threshold {
            self.config.v_max_kmh
        } else {
            (self.v_current_kmh - self.config.decrement_kmh).max(self.config.v_floor_kmh)
        };
        self.v_current_kmh
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedPolicy {
    Constant { v_kmh: f64 },
    Adaptive(AdaptivePolicyState),
}

impl SpeedPolicy {
    pub fn from_config(config: &MissionConfig) -> Self {
        match config.policy {
            PolicyKind::Constant => SpeedPolicy::Constant { v_kmh: config.v_kmh },
            PolicyKind::Adaptive => SpeedPolicy::Adaptive(AdaptivePolicyState::new(config.adaptive.clone())),
        }
    }

    pub fn speed_kmh(&mut self, yaw: f64) -> f64 {
        match self {
            SpeedPolicy::Constant { v_kmh } => *v_kmh,
            SpeedPolicy::Adaptive(state) => state.update(yaw),
        }
    }
}

/// What the world reported on the last GET_STATE.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorldView {
    pub position: [f64; 3],
    pub heading_rad: f64,
    pub airborne: bool,
    pub traversed: bool,
    pub missed: bool,
    pub collisions: i64,
    pub distance_m: f64,
    pub traversal_time_us: Option<u64>,
    pub world_time_us: u64,
}

impl WorldView {
    fn from_packet(p: &crate::protocol::Packet) -> Self {
        let f = |k| p.f64_field(k).unwrap_or(0.0);
        WorldView {
            position: [f("x"), f("y"), f("z")],
            heading_rad: f("heading_rad"),
            airborne: p.bool_field("airborne").unwrap_or(false),
            traversed: p.bool_field("traversed").unwrap_or(false),
            missed: p.bool_field("missed").unwrap_or(false),
            collisions: p.i64_field("collisions").unwrap_or(0),
            distance_m: f("distance_m"),
            traversal_time_us: p.i64_field("traversal_time_us").map(|t| t as u64),
            world_time_us: p.time_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub phase: MissionPhase,
    pub vp_time_us: u64,
}

/// Why cruise ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LandReason {
    Traversed,
    Missed,
    LowBattery,
    Exhausted,
}

pub struct Mission {
    config: MissionConfig,
    phase: MissionPhase,
    transitions: Vec<Transition>,
    predictor: YawPredictor,
    policy: SpeedPolicy,
    view: WorldView,
    iterations: u64,
    iteration_start_us: Vec<u64>,
    land_reason: Option<LandReason>,
    last_yaw: f64,
    last_v_kmh: f64,
    /// Where the gate was passed and the speed to keep until clear of it.
    exit: Option<([f64; 3], f64)>,
    /// Set when the gate is close enough that the centroid stops being a
    /// reliable bearing (parts of the frame leave the field of view).
    committed: bool,
}

impl Mission {
    pub fn new(config: MissionConfig) -> Self {
        let predictor = YawPredictor::geometric(config.predictor_gain);
        Self::with_predictor(config, predictor)
    }

    pub fn with_predictor(config: MissionConfig, predictor: YawPredictor) -> Self {
        Mission {
            policy: SpeedPolicy::from_config(&config),
            config,
            phase: MissionPhase::Takeoff,
            transitions: Vec::new(),
            predictor,
            view: WorldView::default(),
            iterations: 0,
            iteration_start_us: Vec::new(),
            land_reason: None,
            last_yaw: 0.0,
            last_v_kmh: 0.0,
            exit: None,
            committed: false,
        }
    }

    pub fn phase(&self) -> MissionPhase {
        self.phase
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn view(&self) -> &WorldView {
        &self.view
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// VP time at the start of every control iteration.
    pub fn iteration_starts(&self) -> &[u64] {
        &self.iteration_start_us
    }

    pub fn land_reason(&self) -> Option<LandReason> {
        self.land_reason
    }

    pub fn committed(&self) -> bool {
        self.committed
    }

    pub fn last_yaw(&self) -> f64 {
        self.last_yaw
    }

    pub fn last_speed_kmh(&self) -> f64 {
        self.last_v_kmh
    }

    pub fn policy(&self) -> &SpeedPolicy {
        &self.policy
    }

    fn enter(&mut self, phase: MissionPhase, vp: &VirtualPlatform) {
        debug_assert!(phase > self.phase || self.transitions.is_empty());
        self.phase = phase;
        self.transitions.push(Transition {
            phase,
            vp_time_us: vp.vp_time_us(),
        });
    }

    fn land_trigger(&self, vp: &VirtualPlatform) -> Option<LandReason> {
        if vp.battery_exhausted() {
            Some(LandReason::Exhausted)
        } else if self.view.traversed {
            Some(LandReason::Traversed)
        } else if self.view.missed {
            Some(LandReason::Missed)
        } else if vp.battery().soc <= self.config.soc_land_threshold {
            Some(LandReason::LowBattery)
        } else {
            None
        }
    }

    /// One control iteration: capture, infer, observe, command.
    pub fn step(&mut self, vp: &mut VirtualPlatform) -> Result<MissionPhase, VpError> {
        if self.phase == MissionPhase::Done {
            return Ok(self.phase);
        }
        if self.transitions.is_empty() {
            self.enter(MissionPhase::Takeoff, vp);
            vp.arm_motors(true)?;
        }
        self.iterations += 1;
        self.iteration_start_us.push(vp.vp_time_us());

        vp.camera_capture()?;
        while vp.camera_status()? != CameraStatus::Ready {}
        let frame = vp.read_frame()?;
        let input = downsample(&frame).map_err(VpError::BadFrame)?;
        let mut yaw = self.predictor.predict(&input);
        vp.run_task(INFERENCE_TASK)?;
        if self.phase == MissionPhase::Cruise
            && input.dark_fraction(DARK_THRESHOLD) >= self.config.commit_dark_fraction
        {
            self.committed = true;
        }
        if self.committed {
            yaw = 0.0;
        }
        self.last_yaw = yaw;
        self.view = WorldView::from_packet(&vp.get_state()?);

        let climb = self.config.climb_rate_mps;
        if self.phase == MissionPhase::Takeoff
            && (self.view.position[2] >= self.config.cruise_altitude_m || self.land_trigger(vp).is_some())
        {
            self.enter(MissionPhase::Cruise, vp);
        }
        if self.phase == MissionPhase::Cruise {
            if let Some(reason) = self.land_trigger(vp) {
                self.land_reason = Some(reason);
                if reason == LandReason::Traversed {
                    self.exit = Some((self.view.position, self.last_v_kmh));
                }
                self.enter(MissionPhase::Land, vp);
            }
        }
        if self.phase == MissionPhase::Land && !self.view.airborne {
            self.enter(MissionPhase::Done, vp);
            vp.set_motors(0.0, 0.0, 0.0)?;
            vp.arm_motors(false)?;
            return Ok(self.phase);
        }
        match self.phase {
            MissionPhase::Takeoff => {
                self.last_v_kmh = 0.0;
                vp.set_motors(0.0, 0.0, climb)?;
            }
            MissionPhase::Cruise => {
                let v = self.policy.speed_kmh(yaw);
                self.last_v_kmh = v;
                vp.set_motors(kmh_to_mps(v), yaw, 0.0)?;
            }
            MissionPhase::Land => {
                // Fly straight out of the gate frame before descending.
                if let Some((from, v)) = self.exit {
                    let p = self.view.position;
                    if (p[0] - from[0]).hypot(p[1] - from[1]) < self.config.exit_distance_m {
                        self.last_v_kmh = v;
                        vp.set_motors(kmh_to_mps(v), 0.0, 0.0)?;
                        return Ok(self.phase);
                    }
                    self.exit = None;
                }
                self.last_v_kmh = 0.0;
                vp.set_motors(0.0, 0.0, -climb)?;
            }
            MissionPhase::Done => {}
        }
        Ok(self.phase)
    }
}
