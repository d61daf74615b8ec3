use std::collections::BTreeMap;

use super::VpError;
use crate::config::{BusParams, SocParams};
use crate::world::{FRAME_HEIGHT, FRAME_WIDTH};

pub const FRAME_BYTES: usize = FRAME_WIDTH * FRAME_HEIGHT;
pub const STATUS_BYTES: u64 = 4;
/// v_mps, yaw_rate, vz_mps as little-endian f64, then the arm word.
pub const MOTOR_REGISTER_BYTES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

/// One functional-bus transaction, as recorded on the VP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalBusRequest {
    pub address: u64,
    pub access: Access,
    pub data: Vec<u8>,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    CameraStatus,
    FrameBuffer,
    MotorRegisters,
}

/// Peripheral windows on the functional bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMap {
    windows: [(Region, u64, u64); 3],
}

impl MemoryMap {
    pub fn new(bus: &BusParams) -> Self {
        MemoryMap {
            windows: [
                // Register windows are matched first: with the default map the
                // motor block sits inside the frame buffer's address range.
                (Region::CameraStatus, bus.camera_status_addr, STATUS_BYTES),
                (Region::MotorRegisters, bus.motor_addr, MOTOR_REGISTER_BYTES),
                (Region::FrameBuffer, bus.frame_buffer_addr, FRAME_BYTES as u64),
            ],
        }
    }

    pub fn base(&self, region: Region) -> u64 {
        self.windows
            .iter()
            .find(|w| w.0 == region)
            .map(|w| w.1)
            .expect("every region is mapped")
    }

    /// Region and offset for an access of `len` bytes at `addr`; the access
    /// must fall entirely inside one window.
    pub fn resolve(&self, addr: u64, len: usize) -> Result<(Region, usize), VpError> {
        let len = len as u64;
        for &(region, base, size) in &self.windows {
            if addr >= base && addr.checked_add(len).is_some_and(|end| end <= base + size) {
                return Ok((region, (addr - base) as usize));
            }
        }
        Err(VpError::BusError { addr, len })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraStatus {
    Idle = 0,
    Busy = 1,
    Ready = 2,
}

/// Camera with a memory-mapped status register and frame buffer.
#[derive(Debug, Clone)]
pub struct CameraPeripheral {
    pub(crate) status: CameraStatus,
    pub(crate) frame_buffer: Vec<u8>,
    pub(crate) frames_captured: u64,
}

impl Default for CameraPeripheral {
    fn default() -> Self {
        CameraPeripheral {
            status: CameraStatus::Idle,
            frame_buffer: vec![0; FRAME_BYTES],
            frames_captured: 0,
        }
    }
}

impl CameraPeripheral {
    pub fn status(&self) -> CameraStatus {
        self.status
    }

    pub fn frames_captured(&self) -> u64 {
        self.frames_captured
    }

    pub(crate) fn read(&self, offset: usize, len: usize, region: Region) -> Result<Vec<u8>, VpError> {
        match region {
            Region::CameraStatus => {
                let word = (self.status as u32).to_le_bytes();
                Ok(word[offset..offset + len].to_vec())
            }
            Region::FrameBuffer => {
                if self.status != CameraStatus::Ready {
                    return Err(VpError::FrameNotReady);
                }
                Ok(self.frame_buffer[offset..offset + len].to_vec())
            }
            Region::MotorRegisters => unreachable!("not a camera region"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorCommand {
    pub v_mps: f64,
    pub yaw_rate: f64,
    pub vz_mps: f64,
}

/// Motor command registers plus the arm flag gating motor power.
#[derive(Debug, Clone, Default)]
pub struct MotorController {
    pub(crate) registers: [u8; MOTOR_REGISTER_BYTES as usize],
    pub(crate) forwarded: Option<MotorCommand>,
    pub(crate) commands_sent: u64,
}

impl MotorController {
    pub fn command(&self) -> MotorCommand {
        let f = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&self.registers[i * 8..i * 8 + 8]);
            f64::from_le_bytes(b)
        };
        MotorCommand {
            v_mps: f(0),
            yaw_rate: f(1),
            vz_mps: f(2),
        }
    }

    pub fn armed(&self) -> bool {
        self.registers[24] != 0
    }

    /// SET_MOTOR packets actually emitted.
    pub fn commands_sent(&self) -> u64 {
        self.commands_sent
    }

    pub(crate) fn encode(cmd: &MotorCommand) -> [u8; 24] {
        let mut out = [0u8; 24];
        out[0..8].copy_from_slice(&cmd.v_mps.to_le_bytes());
        out[8..16].copy_from_slice(&cmd.yaw_rate.to_le_bytes());
        out[16..24].copy_from_slice(&cmd.vz_mps.to_le_bytes());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocState {
    Active,
    Idle,
}

impl SocState {
    pub fn key(self) -> &'static str {
        match self {
            SocState::Active => "active",
            SocState::Idle => "idle",
        }
    }
}

/// Abstract compute model: named tasks with cycle costs and per-state currents.
#[derive(Debug, Clone)]
pub struct SocModel {
    pub clock_mhz: f64,
    pub tasks: BTreeMap<String, u64>,
    pub power_states_ma: BTreeMap<String, f64>,
    pub(crate) state: SocState,
}

impl SocModel {
    pub fn new(params: &SocParams) -> Self {
        SocModel {
            clock_mhz: params.clock_mhz,
            tasks: params.tasks.clone(),
            power_states_ma: params.states_ma.clone(),
            state: SocState::Idle,
        }
    }

    pub fn state(&self) -> SocState {
        self.state
    }

    pub fn current_ma(&self) -> f64 {
        self.power_states_ma
            .get(self.state.key())
            .copied()
            .unwrap_or(0.0)
    }

    /// Execution time of `task`, rounded to the nearest microsecond.
    pub fn task_time_us(&self, task: &str) -> Result<u64, VpError> {
        let cycles = self
            .tasks
            .get(task)
            .ok_or_else(|| VpError::UnknownTask(task.to_owned()))?;
        Ok((*cycles as f64 / self.clock_mhz).round() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_map_resolution() {
        let map = MemoryMap::new(&BusParams::default());
        let fb = map.base(Region::FrameBuffer);
        assert_eq!(map.resolve(fb, FRAME_BYTES).unwrap(), (Region::FrameBuffer, 0));
        assert!(map.resolve(fb, FRAME_BYTES + 1).is_err());
        assert!(map.resolve(fb + 100, 4).unwrap().1 == 100);
        assert!(matches!(map.resolve(0x1234, 1), Err(VpError::BusError { .. })));
        assert!(map.resolve(u64::MAX, 2).is_err());
        let m = map.base(Region::MotorRegisters);
        assert_eq!(map.resolve(m, 8).unwrap(), (Region::MotorRegisters, 0));
        assert_eq!(map.resolve(m + 24, 1).unwrap(), (Region::MotorRegisters, 24));
    }

    #[test]
    fn task_timing() {
        let mut soc = SocModel::new(&SocParams::default());
        assert_eq!(soc.task_time_us("cnn_inference").unwrap(), 10_000);
        soc.tasks.insert("nop".into(), 0);
        assert_eq!(soc.task_time_us("nop").unwrap(), 0);
        assert!(matches!(soc.task_time_us("fft"), Err(VpError::UnknownTask(_))));
    }

    #[test]
    fn motor_registers_round_trip() {
        let mut m = MotorController::default();
        let cmd = MotorCommand {
            v_mps: 0.278,
            yaw_rate: -0.12,
            vz_mps: 0.0,
        };
        m.registers[..24].copy_from_slice(&MotorController::encode(&cmd));
        assert_eq!(m.command(), cmd);
        assert!(!m.armed());
    }
}
