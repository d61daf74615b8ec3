//! Lock-step time alignment between the VP clock and the fixed-step world.
//!
//! The world only moves inside a transaction: before a request is dispatched
//! the world is stepped up to the first step boundary at or after the VP time,
//! so after every transaction `0 <= world - vp < step` holds.

use thiserror::Error;

use crate::protocol::{Link, Packet, ProtocolError, Status, ADVANCE};

pub const DEFAULT_WORLD_STEP_US: u64 = 32_000;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("request stamped {request_us} us but the VP clock reads {vp_us} us")]
    StaleRequest { request_us: u64, vp_us: u64 },
    #[error("world reported {got} us, expected {expected} us")]
    WorldTimeMismatch { expected: u64, got: u64 },
    #[error("lock-step violated: vp {vp_us} us, world {world_us} us, step {step_us} us")]
    Invariant { vp_us: u64, world_us: u64, step_us: u64 },
}

/// Smallest `n` with `world + n * step >= vp`.
pub fn steps_to_align(vp_time_us: u64, world_time_us: u64, world_step_us: u64) -> u64 {
    if vp_time_us <= world_time_us {
        0
    } else {
        (vp_time_us - world_time_us).div_ceil(world_step_us)
    }
}

/// Paired VP and world clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    vp_time_us: u64,
    world_time_us: u64,
    world_step_us: u64,
}

impl SimClock {
    pub fn new(world_step_us: u64) -> Self {
        assert!(world_step_us > 0, "world step must be positive");
        SimClock {
            vp_time_us: 0,
            world_time_us: 0,
            world_step_us,
        }
    }

    pub fn vp_time_us(&self) -> u64 {
        self.vp_time_us
    }

    pub fn world_time_us(&self) -> u64 {
        self.world_time_us
    }

    pub fn world_step_us(&self) -> u64 {
        self.world_step_us
    }

    /// Adds VP-side progress. The world catches up lazily at the next transaction.
    pub fn advance_vp(&mut self, delta_us: u64) {
        self.vp_time_us += delta_us;
    }

    pub fn is_aligned(&self) -> bool {
        self.world_time_us.is_multiple_of(self.world_step_us)
            && self.world_time_us >= self.vp_time_us
            && self.world_time_us - self.vp_time_us < self.world_step_us
    }
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(DEFAULT_WORLD_STEP_US)
    }
}

/// One completed transaction, for post-run invariant checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub opcode: String,
    pub vp_time_us: u64,
    pub world_time_us: u64,
    pub steps: u64,
}

/// Counts and optionally records every synchronized transaction.
#[derive(Debug, Default, Clone)]
pub struct SyncStats {
    pub transactions: u64,
    pub world_steps: u64,
    pub record: Option<Vec<TransactionRecord>>,
}

impl SyncStats {
    pub fn recording() -> Self {
        SyncStats {
            record: Some(Vec::new()),
            ..Default::default()
        }
    }
}

fn remote_error(response: &Packet) -> Option<ProtocolError> {
    response.error_message().map(|m| ProtocolError::Remote {
        opcode: response.opcode.clone(),
        message: m.to_owned(),
    })
}

/// Aligns the world to the VP clock, then dispatches `request`.
///
/// Error responses from the world are surfaced as [`ProtocolError::Remote`].
pub fn synchronized_transaction(
    clock: &mut SimClock,
    request: &Packet,
    link: &mut dyn Link,
    stats: &mut SyncStats,
) -> Result<Packet, SyncError> {
    if request.time_us != clock.vp_time_us {
        return Err(SyncError::StaleRequest {
            request_us: request.time_us,
            vp_us: clock.vp_time_us,
        });
    }
    let steps = steps_to_align(clock.vp_time_us, clock.world_time_us, clock.world_step_us);
    if steps > 0 {
        let advance = Packet::request(ADVANCE, clock.vp_time_us).with_field("steps", steps);
        let ack = link.transact(&advance)?;
        if let Some(e) = remote_error(&ack) {
            return Err(e.into());
        }
        let expected = clock.world_time_us + steps * clock.world_step_us;
        let reported = ack
            .i64_field("world_time_us")
            .map(|t| t as u64)
            .unwrap_or(ack.time_us);
        if reported != expected {
            return Err(SyncError::WorldTimeMismatch {
                expected,
                got: reported,
            });
        }
        clock.world_time_us = expected;
        stats.world_steps += steps;
    }
    let response = link.transact(request)?;
    if response.status == Some(Status::Ok) && response.time_us != clock.world_time_us {
        return Err(SyncError::WorldTimeMismatch {
            expected: clock.world_time_us,
            got: response.time_us,
        });
    }
    if !clock.is_aligned() {
        return Err(SyncError::Invariant {
            vp_us: clock.vp_time_us,
            world_us: clock.world_time_us,
            step_us: clock.world_step_us,
        });
    }
    stats.transactions += 1;
    if let Some(rec) = stats.record.as_mut() {
        rec.push(TransactionRecord {
            opcode: request.opcode.clone(),
            vp_time_us: clock.vp_time_us,
            world_time_us: clock.world_time_us,
            steps,
        });
    }
    if let Some(e) = remote_error(&response) {
        return Err(e.into());
    }
    Ok(response)
}
