//! Length-prefixed JSON framing.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON object
//! whose keys appear in the order `opcode`, `time_us`, `status`, `payload`.
//! The last two are omitted when absent. Payload keys are sorted; binary
//! fields are base64 (standard alphabet, padded).

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value as Json};

use super::packet::{Packet, Payload, Status, Value};
use super::registry::{PayloadSchema, Registry};
use super::ProtocolError;

pub const LENGTH_PREFIX_BYTES: usize = 4;
/// Upper bound on a single frame body; anything larger is treated as a corrupt stream.
pub const MAX_FRAME_BYTES: usize = 64 << 20;

#[derive(Serialize)]
struct WireOut<'a> {
    opcode: &'a str,
    time_us: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<Map<String, Json>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    opcode: String,
    time_us: u64,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    payload: Option<Map<String, Json>>,
}

fn value_to_json(key: &str, value: &Value, schema: PayloadSchema) -> Result<Json, ProtocolError> {
    Ok(match value {
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => Json::Number((*i).into()),
        Value::Float(f) => Json::Number(
            Number::from_f64(*f)
                .ok_or_else(|| ProtocolError::Encode(format!("non-finite number in `{key}`")))?,
        ),
        Value::Str(s) => Json::String(s.clone()),
        Value::Bytes(bytes) => {
            if !schema.is_binary_field(key) {
                return Err(ProtocolError::Encode(format!(
                    "binary value under non-binary key `{key}` (schema {schema})"
                )));
            }
            Json::String(BASE64.encode(bytes))
        }
        Value::Array(items) => Json::Array(
            items
                .iter()
                .map(|v| match v {
                    Value::Bytes(_) => Err(ProtocolError::Encode(format!(
                        "binary value inside array `{key}`"
                    ))),
                    v => value_to_json(key, v, schema),
                })
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn json_to_value(key: &str, json: Json, schema: PayloadSchema) -> Result<Value, ProtocolError> {
    Ok(match json {
        Json::Bool(b) => Value::Bool(b),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Int(i)
            } else if n.is_f64() {
                Value::Float(n.as_f64().unwrap_or(f64::NAN))
            } else {
                return Err(ProtocolError::Malformed(format!("integer out of range in `{key}`")));
            }
        }
        Json::String(s) if schema.is_binary_field(key) => Value::Bytes(
            BASE64
                .decode(s.as_bytes())
                .map_err(|e| ProtocolError::Malformed(format!("bad base64 in `{key}`: {e}")))?,
        ),
        Json::String(s) => Value::Str(s),
        Json::Array(items) => Value::Array(
            items
                .into_iter()
                .map(|j| json_to_value(key, j, PayloadSchema::None))
                .collect::<Result<_, _>>()?,
        ),
        Json::Null | Json::Object(_) => {
            return Err(ProtocolError::Malformed(format!(
                "unsupported value type in `{key}`"
            )))
        }
    })
}

fn schema_for(registry: &Registry, opcode: &str) -> Result<PayloadSchema, ProtocolError> {
    registry
        .get(opcode)
        .map(|d| d.payload_schema)
        .ok_or_else(|| ProtocolError::UnknownOpcode(opcode.to_owned()))
}

/// Serializes `packet` into one frame, appending it to `out`.
pub fn encode_into(
    packet: &Packet,
    registry: &Registry,
    out: &mut Vec<u8>,
) -> Result<(), ProtocolError> {
    if packet.opcode.is_empty() {
        return Err(ProtocolError::EmptyOpcode);
    }
    let schema = schema_for(registry, &packet.opcode)?;
    let payload = match &packet.payload {
        None => None,
        Some(p) => Some(
            p.iter()
                .map(|(k, v)| Ok((k.clone(), value_to_json(k, v, schema)?)))
                .collect::<Result<Map<_, _>, ProtocolError>>()?,
        ),
    };
    let wire = WireOut {
        opcode: &packet.opcode,
        time_us: packet.time_us,
        status: packet.status.map(Status::as_str),
        payload,
    };
    let start = out.len();
    out.extend_from_slice(&[0; LENGTH_PREFIX_BYTES]);
    serde_json::to_writer(&mut *out, &wire).map_err(|e| ProtocolError::Encode(e.to_string()))?;
    let body_len = out.len() - start - LENGTH_PREFIX_BYTES;
    if body_len > MAX_FRAME_BYTES {
        out.truncate(start);
        return Err(ProtocolError::FrameTooLarge(body_len));
    }
    out[start..start + LENGTH_PREFIX_BYTES].copy_from_slice(&(body_len as u32).to_be_bytes());
    Ok(())
}

pub fn encode_packet(packet: &Packet, registry: &Registry) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    encode_into(packet, registry, &mut out)?;
    Ok(out)
}

/// Decodes the first frame in `bytes`.
///
/// Returns `Ok(None)` when the buffer does not yet hold a complete frame, and
/// otherwise the packet together with the number of bytes it occupied.
/// Bytes past the first frame are never inspected.
pub fn decode_packet(
    bytes: &[u8],
    registry: &Registry,
) -> Result<Option<(Packet, usize)>, ProtocolError> {
    if bytes.len() < LENGTH_PREFIX_BYTES {
        return Ok(None);
    }
    let mut prefix = [0u8; LENGTH_PREFIX_BYTES];
    prefix.copy_from_slice(&bytes[..LENGTH_PREFIX_BYTES]);
    let body_len = u32::from_be_bytes(prefix) as usize;
    if body_len > MAX_FRAME_BYTES {
        return Err(ProtocolError::FrameTooLarge(body_len));
    }
    let frame_len = LENGTH_PREFIX_BYTES + body_len;
    if bytes.len() < frame_len {
        return Ok(None);
    }
    let body = &bytes[LENGTH_PREFIX_BYTES..frame_len];
    let wire: WireIn =
        serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if wire.opcode.is_empty() {
        return Err(ProtocolError::EmptyOpcode);
    }
    let schema = schema_for(registry, &wire.opcode)?;
    let status = match wire.status {
        None => None,
        Some(s) => Some(
            Status::parse(&s).ok_or_else(|| ProtocolError::Malformed(format!("bad status `{s}`")))?,
        ),
    };
    let payload = match wire.payload {
        None => None,
        Some(map) => Some(
            map.into_iter()
                .map(|(k, v)| {
                    let value = json_to_value(&k, v, schema)?;
                    Ok((k, value))
                })
                .collect::<Result<Payload, ProtocolError>>()?,
        ),
    };
    Ok(Some((
        Packet {
            opcode: wire.opcode,
            time_us: wire.time_us,
            status,
            payload,
        },
        frame_len,
    )))
}
