//! Wire protocol between the virtual platform (client) and the world (server).

mod codec;
mod packet;
mod registry;
mod transport;

pub use codec::{decode_packet, encode_into, encode_packet, LENGTH_PREFIX_BYTES, MAX_FRAME_BYTES};
pub use packet::{Packet, Payload, Status, Value};
pub use registry::{
    load_registry, Direction, OpcodeDescriptor, PayloadSchema, Registry, ADVANCE, GET_DATA,
    GET_STATE, RESET, SET_MOTOR, SHUTDOWN,
};
pub(crate) use transport::Listener;
pub use transport::{connect, connect_with_retry, Connection, Endpoint, Link, ENDPOINT_ENV};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("empty opcode")]
    EmptyOpcode,
    #[error("duplicate opcode `{0}`")]
    DuplicateOpcode(String),
    #[error("unknown payload schema `{0}`")]
    UnknownSchema(String),
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("cannot encode packet: {0}")]
    Encode(String),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("request time {got} us precedes previous request time {previous} us")]
    NonMonotonicTime { previous: u64, got: u64 },
    #[error("response opcode `{got}` does not answer request `{sent}`")]
    Mismatch { sent: String, got: String },
    #[error("world returned an error for {opcode}: {message}")]
    Remote { opcode: String, message: String },
    #[error("invalid endpoint `{0}`")]
    BadEndpoint(String),
    #[error("cannot bind {0}: {1}")]
    Bind(String, #[source] std::io::Error),
    #[error("cannot connect to {0}: {1}")]
    Connect(String, #[source] std::io::Error),
    #[error("peer disconnected")]
    Disconnected,
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
