use std::collections::BTreeMap;
use std::fmt;

/// Payload map carried by a packet. Keys are serialized in sorted order.
pub type Payload = BTreeMap<String, Value>;

/// A single payload value.
///
/// `Bytes` only appears under keys the opcode's payload schema declares binary
/// (the `pixels` field of image payloads); on the wire it is a base64 string.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    Array(Vec<Value>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Float(f) => Some(f),
            Value::Int(i) => Some(i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

/// Response status. Requests carry none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Error,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        match s {
            "ok" => Some(Status::Ok),
            "error" => Some(Status::Error),
            _ => None,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One wire message.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub opcode: String,
    /// Microseconds of simulation time. Requests carry the VP time, responses
    /// the world time at which the request was served.
    pub time_us: u64,
    pub status: Option<Status>,
    pub payload: Option<Payload>,
}

impl Packet {
    pub fn request(opcode: impl Into<String>, time_us: u64) -> Self {
        Packet {
            opcode: opcode.into(),
            time_us,
            status: None,
            payload: None,
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = Some(payload);
        self
    }

    pub fn with_field(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload
            .get_or_insert_with(Payload::new)
            .insert(key.to_owned(), value.into());
        self
    }

    pub fn response(opcode: impl Into<String>, time_us: u64, status: Status) -> Self {
        Packet {
            opcode: opcode.into(),
            time_us,
            status: Some(status),
            payload: None,
        }
    }

    pub fn error(opcode: impl Into<String>, time_us: u64, message: impl Into<String>) -> Self {
        Packet::response(opcode, time_us, Status::Error).with_field("message", message.into())
    }

    pub fn is_response(&self) -> bool {
        self.status.is_some()
    }

    pub fn field(&self, key: &str) -> Option<&Value> {
        self.payload.as_ref().and_then(|p| p.get(key))
    }

    pub fn f64_field(&self, key: &str) -> Option<f64> {
        self.field(key).and_then(Value::as_f64)
    }

    pub fn i64_field(&self, key: &str) -> Option<i64> {
        self.field(key).and_then(Value::as_i64)
    }

    pub fn bool_field(&self, key: &str) -> Option<bool> {
        self.field(key).and_then(Value::as_bool)
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.field(key).and_then(Value::as_str)
    }

    /// Error message of an error response, if any.
    pub fn error_message(&self) -> Option<&str> {
        match self.status {
            Some(Status::Error) => Some(self.str_field("message").unwrap_or("unspecified error")),
            _ => None,
        }
    }
}
