//! Experiment harness: single runs, sweeps, reports and FM calibration.

mod campaign;
mod report;

pub use campaign::{Campaign, Matrix};
pub use report::{compare, report, Comparison, ComparisonSpec, Report};

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PolicyKind, SystemConfig};
use crate::energy::{BatteryCatalog, EnergyError};
use crate::mission::{LandReason, Mission, MissionPhase};
use crate::protocol::{connect, connect_with_retry, Endpoint, Link, Payload, ProtocolError, Registry, Value};
use crate::vp::{TraceEntry, VirtualPlatform, VpError, AVIONICS, CAMERA, MOTORS, SOC};
use crate::world::{LocalLink, Scenario, World, WorldError, WorldServer};

pub const DEFAULT_MAX_SIM_TIME_S: f64 = 900.0;

#[derive(Debug, Error)]
pub enum DseError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Vp(#[from] VpError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("cannot start world server `{0}`: {1}")]
    Spawn(String, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("results table: {0}")]
    Csv(String),
    #[error("{0}")]
    Json(String),
    #[error("no run named `{0}` in the results")]
    MissingRun(String),
    #[error("empty sweep: no experiment configurations")]
    EmptySweep,
    #[error("invalid experiment `{0}`: {1}")]
    Invalid(String, String),
    #[error("calibration: {0}")]
    Calibration(String),
}

fn default_max_time() -> f64 {
    DEFAULT_MAX_SIM_TIME_S
}

fn default_policy() -> PolicyKind {
    PolicyKind::Constant
}

/// One mission to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub scenario: String,
    pub battery: String,
    /// Battery mass used by the motor model instead of the catalog weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_override_g: Option<f64>,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub v_kmh: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_time")]
    pub max_sim_time_s: f64,
}

impl ExperimentConfig {
    pub fn new(id: &str, scenario: &str, battery: &str, v_kmh: f64) -> Self {
        ExperimentConfig {
            id: id.to_owned(),
            scenario: scenario.to_owned(),
            battery: battery.to_owned(),
            weight_override_g: None,
            policy: PolicyKind::Constant,
            v_kmh,
            seed: 0,
            max_sim_time_s: DEFAULT_MAX_SIM_TIME_S,
        }
    }

    pub fn adaptive(mut self) -> Self {
        self.policy = PolicyKind::Adaptive;
        self
    }

    pub fn with_weight(mut self, grams: f64) -> Self {
        self.weight_override_g = Some(grams);
        self
    }

    fn validate(&self) -> Result<(), DseError> {
        let bad = |m: &str| Err(DseError::Invalid(self.id.clone(), m.to_owned()));
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return bad("id must be a non-empty file-name-safe string");
        }
        if self.weight_override_g.is_some_and(|w| !(w > 0.0)) {
            return bad("weight override must be positive");
        }
        if !(self.v_kmh >= 0.0 && self.v_kmh.is_finite()) {
            return bad("speed must be a non-negative number");
        }
        if !(self.max_sim_time_s > 0.0) {
            return bad("max_sim_time_s must be positive");
        }
        Ok(())
    }
}

/// Outcome of one run. Flat so that it maps onto one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub id: String,
    pub scenario: String,
    pub battery: String,
    pub battery_mass_g: f64,
    pub policy: PolicyKind,
    pub v_kmh: f64,
    pub seed: u64,
    pub complete: bool,
    pub flight_time_s: f64,
    pub initial_soc: f64,
    pub consumed_soc: f64,
    pub remaining_soc: f64,
    pub distance_m: f64,
    pub traversed: bool,
    pub collided: bool,
    pub collisions: u32,
    pub missed: bool,
    pub time_to_gate_s: Option<f64>,
    pub land_reason: Option<String>,
    pub motors_j: f64,
    pub soc_j: f64,
    pub camera_j: f64,
    pub avionics_j: f64,
    pub battery_output_j: f64,
    pub motor_share: f64,
    pub iterations: u64,
    pub trajectory: Option<String>,
    pub error: Option<String>,
}

impl RunResult {
    fn failed(cfg: &ExperimentConfig, err: &DseError) -> Self {
        RunResult {
            id: cfg.id.clone(),
            scenario: cfg.scenario.clone(),
            battery: cfg.battery.clone(),
            battery_mass_g: cfg.weight_override_g.unwrap_or(0.0),
            policy: cfg.policy,
            v_kmh: cfg.v_kmh,
            seed: cfg.seed,
            complete: false,
            flight_time_s: 0.0,
            initial_soc: 0.0,
            consumed_soc: 0.0,
            remaining_soc: 0.0,
            distance_m: 0.0,
            traversed: false,
            collided: false,
            collisions: 0,
            missed: false,
            time_to_gate_s: None,
            land_reason: None,
            motors_j: 0.0,
            soc_j: 0.0,
            camera_j: 0.0,
            avionics_j: 0.0,
            battery_output_j: 0.0,
            motor_share: 0.0,
            iterations: 0,
            trajectory: None,
            error: Some(err.to_string()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// How the world server is reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// World in the same process, no serialization.
    InProcess,
    /// Start `program serve --endpoint …` as a child per run.
    Spawn { program: PathBuf },
    /// Connect to a server that is already running.
    Attach(Endpoint),
}

/// Everything shared by the runs of a sweep.
#[derive(Clone)]
pub struct Harness {
    pub system: SystemConfig,
    /// Passed to spawned servers so they load the same world parameters.
    pub system_path: Option<PathBuf>,
    pub catalog: BatteryCatalog,
    pub registry: Arc<Registry>,
    pub transport: Transport,
    pub out_dir: Option<PathBuf>,
}

impl Harness {
    pub fn new(system: SystemConfig) -> Result<Self, DseError> {
        let registry = Arc::new(Registry::from_config(&system)?);
        Ok(Harness {
            system,
            system_path: None,
            catalog: BatteryCatalog::default(),
            registry,
            transport: Transport::InProcess,
            out_dir: None,
        })
    }

    pub fn bundled() -> Self {
        Self::new(SystemConfig::bundled()).expect("bundled configuration is valid")
    }
}

struct ChildServer {
    child: Child,
    socket: PathBuf,
}

impl Drop for ChildServer {
    fn drop(&mut self) {
        let done = matches!(self.child.try_wait(), Ok(Some(_)));
        if !done {
            std::thread::sleep(Duration::from_millis(20));
            if !matches!(self.child.try_wait(), Ok(Some(_))) {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
        let _ = std::fs::remove_file(&self.socket);
    }
}

fn unique_socket_path(id: &str) -> PathBuf {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .take(24)
        .collect();
    std::env::temp_dir().join(format!("cosim-{}-{n}-{safe}.sock", std::process::id()))
}

fn open_link(h: &Harness, cfg: &ExperimentConfig, scenario: &Scenario) -> Result<(Box<dyn Link>, Option<ChildServer>), DseError> {
    match &h.transport {
        Transport::InProcess => {
            let world = World::new(scenario.clone(), h.system.world.clone());
            let server = WorldServer::new(world, h.registry.clone());
            Ok((Box::new(LocalLink::new(server)), None))
        }
        Transport::Attach(ep) => Ok((Box::new(connect(ep, h.registry.clone())?), None)),
        Transport::Spawn { program } => {
            let socket = unique_socket_path(&cfg.id);
            let endpoint = Endpoint::Unix(socket.clone());
            let mut cmd = Command::new(program);
            cmd.arg("serve").arg("--endpoint").arg(endpoint.to_string());
            if let Some(p) = &h.system_path {
                cmd.arg("--config").arg(p);
            }
            cmd.stdin(Stdio::null()).stdout(Stdio::null());
            let child = cmd
                .spawn()
                .map_err(|e| DseError::Spawn(program.display().to_string(), e))?;
            let guard = ChildServer { child, socket };
            let conn = connect_with_retry(&endpoint, h.registry.clone(), 500, Duration::from_millis(10))?;
            Ok((Box::new(conn), Some(guard)))
        }
    }
}

/// Simulates one mission to completion or until its time budget runs out.
pub fn run_experiment(h: &Harness, cfg: &ExperimentConfig) -> Result<RunResult, DseError> {
    run(h, cfg, false).map(|(r, _)| r)
}

/// Like [`run_experiment`], also returning every packet the VP emitted.
pub fn run_experiment_traced(h: &Harness, cfg: &ExperimentConfig) -> Result<(RunResult, Vec<TraceEntry>), DseError> {
    run(h, cfg, true).map(|(r, t)| (r, t.unwrap_or_default()))
}

fn run(h: &Harness, cfg: &ExperimentConfig, trace: bool) -> Result<(RunResult, Option<Vec<TraceEntry>>), DseError> {
    cfg.validate()?;
    let battery = h.catalog.battery(&cfg.battery)?;
    let mass_g = cfg.weight_override_g.unwrap_or(battery.weight_g);
    let mut scenario = Scenario::resolve(&cfg.scenario)?;
    if let Some(noise) = scenario.noise.as_mut() {
        noise.seed = noise.seed.wrapping_add(cfg.seed);
    }
    let mut mission_cfg = h.system.mission.clone();
    mission_cfg.policy = cfg.policy;
    mission_cfg.v_kmh = cfg.v_kmh;
    mission_cfg.scenario = cfg.scenario.clone();

    let (link, child) = open_link(h, cfg, &scenario)?;
    let platform = h.system.platform()?;
    let mut vp = VirtualPlatform::new(&platform, battery, Some(mass_g), link)?;
    if trace {
        vp.enable_trace();
    }
    let initial_soc = vp.battery().soc;

    let trajectory = h
        .out_dir
        .as_ref()
        .map(|d| absolute(&d.join(format!("trajectory_{}.csv", cfg.id))));
    let mut reset = Payload::new();
    let scenario_json =
        serde_json::to_string(&scenario).map_err(|e| DseError::Json(e.to_string()))?;
    reset.insert("scenario_json".into(), Value::Str(scenario_json));
    if let Some(t) = &trajectory {
        reset.insert("trajectory_path".into(), Value::Str(t.display().to_string()));
    }
    vp.reset_world(reset)?;

    let mut mission = Mission::new(mission_cfg);
    let budget_us = (cfg.max_sim_time_s * 1e6) as u64;
    while mission.phase() != MissionPhase::Done && vp.vp_time_us() < budget_us {
        mission.step(&mut vp)?;
    }
    let end_us = vp.vp_time_us();
    vp.finish_episode()?;
    if child.is_some() {
        vp.shutdown_world()?;
    }

    let start = mission.transitions().first().map_or(0, |t| t.vp_time_us);
    let end = mission
        .transitions()
        .iter()
        .find(|t| t.phase == MissionPhase::Done)
        .map_or(end_us, |t| t.vp_time_us);
    let view = mission.view();
    let ledger = vp.ledger();
    let remaining = vp.battery().soc;
    let land_reason = mission.land_reason().map(|r| {
        match r {
            LandReason::Traversed => "traversed",
            LandReason::Missed => "missed",
            LandReason::LowBattery => "low_battery",
            LandReason::Exhausted => "exhausted",
        }
        .to_owned()
    });
    let result = RunResult {
        id: cfg.id.clone(),
        scenario: cfg.scenario.clone(),
        battery: cfg.battery.clone(),
        battery_mass_g: mass_g,
        policy: cfg.policy,
        v_kmh: cfg.v_kmh,
        seed: cfg.seed,
        complete: mission.phase() == MissionPhase::Done,
        flight_time_s: (end - start) as f64 * 1e-6,
        initial_soc,
        consumed_soc: initial_soc - remaining,
        remaining_soc: remaining,
        distance_m: view.distance_m,
        traversed: view.traversed,
        collided: view.collisions > 0,
        collisions: view.collisions as u32,
        missed: view.missed,
        time_to_gate_s: view.traversal_time_us.map(|t| t as f64 * 1e-6),
        land_reason,
        motors_j: ledger.component_j(MOTORS),
        soc_j: ledger.component_j(SOC),
        camera_j: ledger.component_j(CAMERA),
        avionics_j: ledger.component_j(AVIONICS),
        battery_output_j: ledger.battery_output_j,
        motor_share: ledger.share(MOTORS),
        iterations: mission.iterations(),
        trajectory: trajectory
            .filter(|t| t.exists())
            .map(|t| t.display().to_string()),
        error: None,
    };
    Ok((result, vp.trace().map(<[_]>::to_vec)))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Independent runs on a thread pool. Without the `parallel` feature
    /// this degrades to sequential execution.
    Parallel,
}

fn run_or_record(h: &Harness, cfg: &ExperimentConfig) -> RunResult {
    match run_experiment(h, cfg) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("run {} failed: {e}", cfg.id);
            RunResult::failed(cfg, &e)
        }
    }
}

/// Runs every configuration. Per-run failures are recorded in their rows.
/// Results keep the order of `configs`.
pub fn sweep(h: &Harness, configs: &[ExperimentConfig], execution: Execution) -> Result<Vec<RunResult>, DseError> {
    if configs.is_empty() {
        return Err(DseError::EmptySweep);
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = configs.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(DseError::Invalid(dup.id.clone(), "duplicate run id".into()));
    }
    if let Some(dir) = &h.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| DseError::Io(dir.display().to_string(), e))?;
    }
    Ok(match execution {
        Execution::Sequential => configs.iter().map(|c| run_or_record(h, c)).collect(),
        Execution::Parallel => run_parallel(h, configs),
    })
}

#[cfg(feature = "parallel")]
fn run_parallel(h: &Harness, configs: &[ExperimentConfig]) -> Vec<RunResult> {
    use rayon::prelude::*;
    configs.par_iter().map(|c| run_or_record(h, c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_parallel(h: &Harness, configs: &[ExperimentConfig]) -> Vec<RunResult> {
    configs.iter().map(|c| run_or_record(h, c)).collect()
}

pub fn write_results_csv(path: &Path, results: &[RunResult]) -> Result<(), DseError> {
    let csv_err = |e: csv::Error| DseError::Csv(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in results {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DseError::Io(path.display().to_string(), e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<RunResult>, DseError> {
    let csv_err = |e: csv::Error| DseError::Csv(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Flight in open space until the landing threshold, at a constant speed.
pub fn endurance_config(id: &str, battery: &str, v_kmh: f64) -> ExperimentConfig {
    ExperimentConfig::new(id, "open", battery, v_kmh)
}

/// Bisects the figure of merit so that the hover endurance of `battery`
/// matches `target_s`. Endurance grows monotonically with FM.
pub fn calibrate_figure_of_merit(h: &Harness, battery: &str, target_s: f64, tolerance_s: f64) -> Result<(f64, f64), DseError> {
    let cfg = endurance_config("calibration", battery, 0.0);
    let mut h = h.clone();
    h.transport = Transport::InProcess;
    h.out_dir = None;
    let mut endurance = |fm: f64| -> Result<f64, DseError> {
        set_figure_of_merit(&mut h.system, fm)?;
        let r = run_experiment(&h, &cfg)?;
        if !r.complete {
            return Err(DseError::Calibration(format!("FM {fm}: run did not finish")));
        }
        Ok(r.flight_time_s)
    };
    // At very low FM the hover demand exceeds what the battery can deliver;
    // a run that cannot start counts as too short.
    let (mut lo, mut hi) = (0.05, 1.0);
    if endurance(hi)? < target_s || endurance(lo).is_ok_and(|t| t > target_s) {
        return Err(DseError::Calibration(format!("{target_s} s not reachable with FM in [{lo}, {hi}]")));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let t = endurance(mid)?;
        if (t - target_s).abs() <= tolerance_s {
            return Ok((mid, t));
        }
        if t < target_s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(DseError::Calibration("bisection did not converge".into()))
}

/// Overrides the motor figure of merit in the system configuration.
pub fn set_figure_of_merit(system: &mut SystemConfig, fm: f64) -> Result<(), DseError> {
    let motors = system
        .modules
        .iter_mut()
        .find(|m| m.name == "motors")
        .ok_or_else(|| DseError::Calibration("no `motors` module in the configuration".into()))?;
    match motors.power.as_object_mut() {
        Some(obj) => {
            obj.insert("figure_of_merit".into(), serde_json::json!(fm));
        }
        None => motors.power = serde_json::json!({ "figure_of_merit": fm }),
    }
    Ok(())
}
