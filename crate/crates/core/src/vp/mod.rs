//! Virtual platform: abstract SoC, functional bus with memory-mapped camera
//! and motor controller, and the power bus hooks. It is the world's client.

mod peripherals;

pub use peripherals::{
    Access, CameraPeripheral, CameraStatus, FunctionalBusRequest, MemoryMap, MotorCommand,
    MotorController, Region, SocModel, SocState, FRAME_BYTES, MOTOR_REGISTER_BYTES, STATUS_BYTES,
};

use thiserror::Error;

use crate::config::{CameraParams, PlatformParams};
use crate::energy::{
    BatteryModel, ConverterModel, Demand, EnergyError, EnergyLedger, Load, MotorPowerModel,
    PowerBus, BATTERY_RAIL,
};
use crate::image::GrayImage;
use crate::protocol::{
    Link, Packet, Payload, ProtocolError, Value, GET_DATA, GET_STATE, RESET, SET_MOTOR, SHUTDOWN,
};
use crate::sync::{synchronized_transaction, SimClock, SyncError, SyncStats};
use crate::world::{FRAME_HEIGHT, FRAME_WIDTH};

pub const CAMERA: &str = "camera";
pub const SOC: &str = "soc";
pub const MOTORS: &str = "motors";
pub const AVIONICS: &str = "avionics";

#[derive(Debug, Error)]
pub enum VpError {
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("bus error: {len} bytes at {addr:#x} are not inside one mapped region")]
    BusError { addr: u64, len: u64 },
    #[error("register at {addr:#x} is read-only")]
    ReadOnly { addr: u64 },
    #[error("frame buffer read while the camera is not ready")]
    FrameNotReady,
    #[error("capture requested while the camera is busy")]
    CameraBusy,
    #[error("world returned a bad frame: {0}")]
    BadFrame(String),
    #[error("invalid motor command: {0}")]
    InvalidCommand(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("world reset is only allowed before the first VP tick")]
    ResetMidRun,
}

impl From<ProtocolError> for VpError {
    fn from(e: ProtocolError) -> Self {
        VpError::Sync(SyncError::Protocol(e))
    }
}

/// One emitted request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub opcode: String,
    pub time_us: u64,
    /// World time stamped on the response.
    pub world_time_us: u64,
}

/// Wraps the link so every emitted packet is checked for monotonic time and
/// optionally recorded.
struct Emitter<'a> {
    link: &'a mut dyn Link,
    trace: &'a mut Option<Vec<TraceEntry>>,
    last_us: &'a mut Option<u64>,
}

impl Link for Emitter<'_> {
    fn transact(&mut self, request: &Packet) -> Result<Packet, ProtocolError> {
        if let Some(prev) = *self.last_us {
            if request.time_us < prev {
                return Err(ProtocolError::NonMonotonicTime {
                    previous: prev,
                    got: request.time_us,
                });
            }
        }
        *self.last_us = Some(request.time_us);
        let response = self.link.transact(request)?;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEntry {
                opcode: request.opcode.clone(),
                time_us: request.time_us,
                world_time_us: response.time_us,
            });
        }
        Ok(response)
    }
}

type FrameCallback = Box<dyn FnMut(u64) + Send>;

pub struct VirtualPlatform {
    clock: SimClock,
    link: Box<dyn Link>,
    stats: SyncStats,
    map: MemoryMap,
    bus_latency_us: u64,
    camera: CameraPeripheral,
    camera_params: CameraParams,
    motors: MotorController,
    motor_model: MotorPowerModel,
    soc: SocModel,
    power: PowerBus,
    ledger: EnergyLedger,
    unpowered_us: u64,
    trace: Option<Vec<TraceEntry>>,
    bus_log: Option<Vec<FunctionalBusRequest>>,
    last_emitted_us: Option<u64>,
    frame_ready: Option<FrameCallback>,
}

impl VirtualPlatform {
    /// `mass_battery_g` overrides the battery's own weight in the motor model.
    pub fn new(
        params: &PlatformParams,
        battery: BatteryModel,
        mass_battery_g: Option<f64>,
        link: Box<dyn Link>,
    ) -> Result<Self, VpError> {
        let motor_model = params
            .motors
            .model(mass_battery_g.unwrap_or(battery.weight_g));
        let mut power = PowerBus::new(battery);
        power.add_converter(CAMERA, ConverterModel::new(params.camera.converter_efficiency)?);
        power.add_converter(SOC, ConverterModel::new(params.soc.converter_efficiency)?);
        power.add_converter(AVIONICS, ConverterModel::new(params.avionics.converter_efficiency)?);
        power.set_load(
            CAMERA,
            Load {
                rail: CAMERA.into(),
                rail_volts: params.camera.rail_volts,
                demand: Demand::CurrentMa(params.camera.idle_ma),
            },
        );
        power.set_load(
            SOC,
            Load {
                rail: SOC.into(),
                rail_volts: params.soc.rail_volts,
                demand: Demand::CurrentMa(0.0),
            },
        );
        power.set_load(
            AVIONICS,
            Load {
                rail: AVIONICS.into(),
                rail_volts: params.avionics.rail_volts,
                demand: Demand::CurrentMa(params.avionics.current_ma),
            },
        );
        power.set_load(
            MOTORS,
            Load {
                rail: BATTERY_RAIL.into(),
                rail_volts: 3.7,
                demand: Demand::PowerMw(0.0),
            },
        );
        Ok(VirtualPlatform {
            clock: SimClock::default(),
            link,
            stats: SyncStats::default(),
            map: MemoryMap::new(&params.bus),
            bus_latency_us: params.bus.latency_us,
            camera: CameraPeripheral::default(),
            camera_params: params.camera.clone(),
            motors: MotorController::default(),
            motor_model,
            soc: SocModel::new(&params.soc),
            power,
            ledger: EnergyLedger::default(),
            unpowered_us: 0,
            trace: None,
            bus_log: None,
            last_emitted_us: None,
            frame_ready: None,
        })
    }

    /// Records every emitted packet and the clock pair after each transaction.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
        if self.stats.record.is_none() {
            self.stats.record = Some(Vec::new());
        }
    }

    /// Records functional-bus transactions, frame reads included.
    pub fn enable_bus_log(&mut self) {
        self.bus_log.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn bus_log(&self) -> Option<&[FunctionalBusRequest]> {
        self.bus_log.as_deref()
    }

    /// Interrupt-style completion: called with the VP time when a frame lands.
    pub fn on_frame_ready(&mut self, callback: FrameCallback) {
        self.frame_ready = Some(callback);
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn vp_time_us(&self) -> u64 {
        self.clock.vp_time_us()
    }

    pub fn sync_stats(&self) -> &SyncStats {
        &self.stats
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn battery(&self) -> &BatteryModel {
        self.power.battery()
    }

    pub fn battery_mut(&mut self) -> &mut BatteryModel {
        self.power.battery_mut()
    }

    pub fn battery_exhausted(&self) -> bool {
        self.power.battery().is_exhausted()
    }

    /// VP time that elapsed after the battery ran empty.
    pub fn unpowered_us(&self) -> u64 {
        self.unpowered_us
    }

    pub fn camera(&self) -> &CameraPeripheral {
        &self.camera
    }

    pub fn motors(&self) -> &MotorController {
        &self.motors
    }

    pub fn motor_model(&self) -> &MotorPowerModel {
        &self.motor_model
    }

    pub fn soc(&self) -> &SocModel {
        &self.soc
    }

    pub fn memory_map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn camera_params(&self) -> &CameraParams {
        &self.camera_params
    }

    fn refresh_loads(&mut self) -> Result<(), EnergyError> {
        let cam = if self.camera.status == CameraStatus::Busy {
            self.camera_params.active_ma
        } else {
            self.camera_params.idle_ma
        };
        self.power.set_demand(CAMERA, Demand::CurrentMa(cam))?;
        self.power.set_demand(SOC, Demand::CurrentMa(self.soc.current_ma()))?;
        let cmd = self.motors.command();
        let p = self.motor_model.total_motor_power(cmd.v_mps, self.motors.armed());
        self.power.set_demand(MOTORS, Demand::PowerMw(p * 1e3))
    }

    /// Lets `dt_us` of VP time pass in the current power state.
    pub fn elapse(&mut self, dt_us: u64) -> Result<(), VpError> {
        if dt_us == 0 {
            return Ok(());
        }
        self.refresh_loads()?;
        match self.power.solve(dt_us) {
            Ok(step) => self.ledger.record(&step),
            Err(EnergyError::BatteryExhausted(_)) => self.unpowered_us += dt_us,
            Err(e) => return Err(e.into()),
        }
        self.clock.advance_vp(dt_us);
        Ok(())
    }

    fn emitter(&mut self) -> (Emitter<'_>, &mut SimClock, &mut SyncStats) {
        (
            Emitter {
                link: self.link.as_mut(),
                trace: &mut self.trace,
                last_us: &mut self.last_emitted_us,
            },
            &mut self.clock,
            &mut self.stats,
        )
    }

    /// Synchronized request stamped with the current VP time.
    pub fn transact(&mut self, opcode: &str, payload: Option<Payload>) -> Result<Packet, VpError> {
        let mut request = Packet::request(opcode, self.clock.vp_time_us());
        request.payload = payload;
        let (mut link, clock, stats) = self.emitter();
        Ok(synchronized_transaction(clock, &request, &mut link, stats)?)
    }

    /// Re-initializes the world. Only valid before any VP time has passed.
    pub fn reset_world(&mut self, payload: Payload) -> Result<Packet, VpError> {
        if self.clock.vp_time_us() != 0 {
            return Err(VpError::ResetMidRun);
        }
        let request = Packet::request(RESET, 0).with_payload(payload);
        let response = {
            let (mut link, _, _) = self.emitter();
            link.transact(&request)?
        };
        if let Some(m) = response.error_message() {
            return Err(ProtocolError::Remote {
                opcode: RESET.into(),
                message: m.to_owned(),
            }
            .into());
        }
        let step = response
            .i64_field("world_step_us")
            .filter(|s| *s > 0)
            .map(|s| s as u64)
            .unwrap_or(self.clock.world_step_us());
        self.clock = SimClock::new(step);
        Ok(response)
    }

    /// Ends the world episode (flushing its trajectory log) without touching
    /// the VP clock. The platform should not be used for another mission.
    pub fn finish_episode(&mut self) -> Result<Packet, VpError> {
        self.control(RESET)
    }

    pub fn get_state(&mut self) -> Result<Packet, VpError> {
        self.transact(GET_STATE, None)
    }

    /// Sent without alignment: the world may already have been reset.
    pub fn shutdown_world(&mut self) -> Result<Packet, VpError> {
        self.control(SHUTDOWN)
    }

    fn control(&mut self, opcode: &str) -> Result<Packet, VpError> {
        let request = Packet::request(opcode, self.clock.vp_time_us());
        let response = {
            let (mut link, _, _) = self.emitter();
            link.transact(&request)?
        };
        match response.error_message() {
            Some(m) => Err(ProtocolError::Remote {
                opcode: opcode.into(),
                message: m.to_owned(),
            }
            .into()),
            None => Ok(response),
        }
    }

    fn log_bus(&mut self, address: u64, access: Access, data: &[u8]) {
        if let Some(log) = self.bus_log.as_mut() {
            log.push(FunctionalBusRequest {
                address,
                access,
                data: data.to_vec(),
                latency_us: self.bus_latency_us,
            });
        }
    }

    pub fn bus_read(&mut self, addr: u64, len: usize) -> Result<Vec<u8>, VpError> {
        let (region, offset) = self.map.resolve(addr, len)?;
        self.elapse(self.bus_latency_us)?;
        let data = match region {
            Region::MotorRegisters => self.motors.registers[offset..offset + len].to_vec(),
            r => self.camera.read(offset, len, r)?,
        };
        self.log_bus(addr, Access::Read, &data);
        Ok(data)
    }

    pub fn bus_write(&mut self, addr: u64, data: &[u8]) -> Result<(), VpError> {
        let (region, offset) = self.map.resolve(addr, data.len())?;
        if region != Region::MotorRegisters {
            return Err(VpError::ReadOnly { addr });
        }
        self.elapse(self.bus_latency_us)?;
        self.motors.registers[offset..offset + data.len()].copy_from_slice(data);
        self.log_bus(addr, Access::Write, data);
        Ok(())
    }

    /// Polls the camera status register.
    pub fn camera_status(&mut self) -> Result<CameraStatus, VpError> {
        let addr = self.map.base(Region::CameraStatus);
        let word = self.bus_read(addr, STATUS_BYTES as usize)?;
        Ok(match word[0] {
            0 => CameraStatus::Idle,
            1 => CameraStatus::Busy,
            _ => CameraStatus::Ready,
        })
    }

    /// Requests a frame from the world and holds the camera busy for one
    /// frame period.
    pub fn camera_capture(&mut self) -> Result<(), VpError> {
        if self.camera.status == CameraStatus::Busy {
            return Err(VpError::CameraBusy);
        }
        self.camera.status = CameraStatus::Busy;
        let frame = match self.transact(GET_DATA, None).and_then(|r| frame_pixels(&r)) {
            Ok(f) => f,
            Err(e) => {
                self.camera.status = CameraStatus::Idle;
                return Err(e);
            }
        };
        self.camera.frame_buffer = frame;
        self.elapse(self.camera_params.frame_period_us())?;
        self.camera.status = CameraStatus::Ready;
        self.camera.frames_captured += 1;
        if let Some(cb) = self.frame_ready.as_mut() {
            cb(self.clock.vp_time_us());
        }
        Ok(())
    }

    /// Reads the whole frame buffer over the bus.
    pub fn read_frame(&mut self) -> Result<GrayImage, VpError> {
        let addr = self.map.base(Region::FrameBuffer);
        let pixels = self.bus_read(addr, FRAME_BYTES)?;
        Ok(GrayImage::from_pixels(FRAME_WIDTH, FRAME_HEIGHT, pixels).expect("frame size"))
    }

    /// Runs a registered SoC task; the SoC is active for its duration.
    pub fn run_task(&mut self, task: &str) -> Result<u64, VpError> {
        let t = self.soc.task_time_us(task)?;
        self.soc.state = SocState::Active;
        let r = self.elapse(t);
        self.soc.state = SocState::Idle;
        r.map(|_| t)
    }

    /// Writes the motor registers and forwards the command to the world if
    /// it differs from the last one forwarded.
    pub fn set_motors(&mut self, v_mps: f64, yaw_rate: f64, vz_mps: f64) -> Result<(), VpError> {
        if !(-1.0..=1.0).contains(&yaw_rate) {
            return Err(VpError::InvalidCommand(format!("yaw rate {yaw_rate} outside [-1, 1]")));
        }
        if !(v_mps >= 0.0 && v_mps.is_finite()) {
            return Err(VpError::InvalidCommand(format!("forward speed {v_mps}")));
        }
        if !vz_mps.is_finite() {
            return Err(VpError::InvalidCommand(format!("vertical speed {vz_mps}")));
        }
        let cmd = MotorCommand {
            v_mps,
            yaw_rate,
            vz_mps,
        };
        let base = self.map.base(Region::MotorRegisters);
        self.bus_write(base, &MotorController::encode(&cmd))?;
        if self.motors.forwarded == Some(cmd) {
            return Ok(());
        }
        let payload = Payload::from([
            ("v_mps".to_owned(), Value::Float(v_mps)),
            ("yaw_rate".to_owned(), Value::Float(yaw_rate)),
            ("vz_mps".to_owned(), Value::Float(vz_mps)),
        ]);
        self.transact(SET_MOTOR, Some(payload))?;
        self.motors.forwarded = Some(cmd);
        self.motors.commands_sent += 1;
        Ok(())
    }

    /// Spins the motors up or down; armed motors draw flight power.
    pub fn arm_motors(&mut self, armed: bool) -> Result<(), VpError> {
        let base = self.map.base(Region::MotorRegisters);
        let mut word = [0u8; 8];
        word[0] = armed as u8;
        self.bus_write(base + 24, &word)
    }
}

fn frame_pixels(response: &Packet) -> Result<Vec<u8>, VpError> {
    let w = response.i64_field("width");
    let h = response.i64_field("height");
    if w != Some(FRAME_WIDTH as i64) || h != Some(FRAME_HEIGHT as i64) {
        return Err(VpError::BadFrame(format!("{w:?}x{h:?}")));
    }
    let pixels = response
        .field("pixels")
        .and_then(Value::as_bytes)
        .ok_or_else(|| VpError::BadFrame("no pixel data".into()))?;
    if pixels.len() != FRAME_BYTES {
        return Err(VpError::BadFrame(format!("{} bytes", pixels.len())));
    }
    Ok(pixels.to_vec())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::WorldConfig;
    use crate::energy::BatteryCatalog;
    use crate::protocol::Registry;
    use crate::world::{render_camera, LocalLink, Scenario, World, WorldServer};

    fn vp(scenario: &str) -> VirtualPlatform {
        let world = World::new(Scenario::builtin(scenario).unwrap(), WorldConfig::default());
        let link = LocalLink::new(WorldServer::new(world, Arc::new(Registry::builtin())));
        let battery = BatteryCatalog::default().battery("stock").unwrap();
        let mut vp =
            VirtualPlatform::new(&PlatformParams::default(), battery, None, Box::new(link)).unwrap();
        vp.enable_trace();
        vp.enable_bus_log();
        vp
    }

    #[test]
    fn fresh_camera_is_idle() {
        let mut v = vp("easy");
        assert_eq!(v.camera_status().unwrap(), CameraStatus::Idle);
        assert!(matches!(v.read_frame(), Err(VpError::FrameNotReady)));
    }

    #[test]
    fn capture_emits_one_get_data_at_vp_time() {
        let mut v = vp("easy");
        v.camera_capture().unwrap();
        let trace = v.trace().unwrap();
        assert_eq!(
            trace,
            &[TraceEntry {
                opcode: GET_DATA.into(),
                time_us: 0,
                world_time_us: 0,
            }]
        );
        assert_eq!(v.camera_status().unwrap(), CameraStatus::Ready);
        assert_eq!(v.vp_time_us(), 16_667 + 1);
    }

    #[test]
    fn frame_buffer_matches_world_render() {
        let mut v = vp("easy");
        v.camera_capture().unwrap();
        let frame = v.read_frame().unwrap();
        let scenario = Scenario::builtin("easy").unwrap();
        let world = World::new(scenario.clone(), WorldConfig::default());
        assert_eq!(frame.fingerprint(), render_camera(world.state(), &scenario).fingerprint());
    }

    #[test]
    fn capture_charges_one_frame_of_active_camera_current() {
        let mut v = vp("easy");
        v.camera_capture().unwrap();
        let p = PlatformParams::default().camera;
        let expected = p.active_ma * 1e-3 * p.rail_volts / p.converter_efficiency * 16_667e-6;
        assert!((v.ledger().component_j(CAMERA) - expected).abs() < 1e-12);
    }

    #[test]
    fn back_to_back_captures_take_two_frame_periods() {
        let mut v = vp("easy");
        v.camera_capture().unwrap();
        v.camera_capture().unwrap();
        assert!(v.vp_time_us() >= 2 * 16_667);
    }

    #[test]
    fn inference_takes_cycles_over_clock() {
        let mut v = vp("easy");
        assert_eq!(v.run_task("cnn_inference").unwrap(), 10_000);
        let p = PlatformParams::default().soc;
        let expected = 25e-3 * p.rail_volts / p.converter_efficiency * 0.01;
        assert!((v.ledger().component_j(SOC) - expected).abs() < 1e-12);
        assert!(matches!(v.run_task("nope"), Err(VpError::UnknownTask(_))));
    }

    #[test]
    fn out_of_range_yaw_sends_nothing() {
        let mut v = vp("easy");
        assert!(matches!(
            v.set_motors(0.1, 1.5, 0.0),
            Err(VpError::InvalidCommand(_))
        ));
        assert!(v.trace().unwrap().is_empty());
        assert_eq!(v.vp_time_us(), 0);
    }

    #[test]
    fn motor_command_forwarded_once_per_change() {
        let mut v = vp("easy");
        v.set_motors(0.1, 0.0, 0.0).unwrap();
        v.set_motors(0.1, 0.0, 0.0).unwrap();
        v.set_motors(0.2, 0.0, 0.0).unwrap();
        let sent = v
            .trace()
            .unwrap()
            .iter()
            .filter(|t| t.opcode == SET_MOTOR)
            .count();
        assert_eq!(sent, 2);
        assert_eq!(v.motors().commands_sent(), 2);
    }

    #[test]
    fn commanded_turn_reaches_the_world() {
        let mut v = vp("open");
        let mut p = Payload::new();
        p.insert("scenario".into(), Value::Str("open".into()));
        v.reset_world(p).unwrap();
        v.set_motors(0.0, 0.0, 0.5).unwrap();
        v.elapse(2_000_000).unwrap();
        v.set_motors(0.278, -0.12, 0.0).unwrap();
        let before = v.get_state().unwrap();
        v.elapse(1_000_000).unwrap();
        let after = v.get_state().unwrap();
        let dx = after.f64_field("x").unwrap() - before.f64_field("x").unwrap();
        let dy = after.f64_field("y").unwrap() - before.f64_field("y").unwrap();
        assert!((dx.hypot(dy) - 0.278).abs() < 0.02, "{dx} {dy}");
        assert!(dy < 0.0);
    }

    #[test]
    fn unmapped_access_is_a_bus_error() {
        let mut v = vp("easy");
        assert!(matches!(v.bus_read(0x10, 4), Err(VpError::BusError { .. })));
        let cam = v.memory_map().base(Region::CameraStatus);
        assert!(matches!(v.bus_write(cam, &[1]), Err(VpError::ReadOnly { .. })));
    }

    #[test]
    fn ledger_accounts_every_microsecond() {
        let mut v = vp("easy");
        v.arm_motors(true).unwrap();
        v.camera_capture().unwrap();
        v.run_task("cnn_inference").unwrap();
        v.set_motors(0.1, 0.0, 0.5).unwrap();
        v.elapse(12_345).unwrap();
        assert_eq!(v.ledger().elapsed_us, v.vp_time_us());
        let l = v.ledger();
        assert!((l.total_component_j() - l.battery_output_j).abs() / l.battery_output_j < 1e-6);
    }

    #[test]
    fn emitted_times_never_decrease() {
        let mut v = vp("easy");
        for _ in 0..5 {
            v.camera_capture().unwrap();
            v.run_task("cnn_inference").unwrap();
            v.get_state().unwrap();
        }
        let t: Vec<u64> = v.trace().unwrap().iter().map(|e| e.time_us).collect();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        for r in v.sync_stats().record.as_ref().unwrap() {
            assert!(r.world_time_us >= r.vp_time_us && r.world_time_us - r.vp_time_us < 32_000);
        }
    }

    #[test]
    fn frame_ready_callback_fires() {
        let mut v = vp("easy");
        let hits = Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = hits.clone();
        v.on_frame_ready(Box::new(move |t| sink.lock().unwrap().push(t)));
        v.camera_capture().unwrap();
        assert_eq!(*hits.lock().unwrap(), vec![16_667]);
    }
}
