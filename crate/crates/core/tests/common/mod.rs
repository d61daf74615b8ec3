#![allow(dead_code)]

use cosim_core::protocol::{Packet, Payload, Status, Value, GET_DATA, GET_STATE, SET_MOTOR};
use rand::Rng;

const OPCODES: [&str; 6] = ["GET_DATA", "SET_MOTOR", "ADVANCE", "RESET", "GET_STATE", "SHUTDOWN"];

fn random_f64(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => f64::from_bits(rng.next_u64()).clamp(-1e300, 1e300),
        1 => rng.random_range(-1.0..1.0),
        2 => [0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, f64::MIN, f64::EPSILON][rng.random_range(0..6)],
        3 => rng.random::<f64>() * 1e-300,
        4 => (rng.random_range(-1000i64..1000) as f64) + 0.5,
        _ => 0.1 * rng.random_range(-100i64..100) as f64,
    }
}

fn random_string(rng: &mut impl Rng) -> String {
    let n = rng.random_range(0..12);
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => rng.random_range('a'..='z'),
            1 => ['"', '\\', '\n', '\t', '\u{0}', '/'][rng.random_range(0..6)],
            2 => rng.random_range('\u{80}'..='\u{7ff}'),
            _ => rng.random_range('\u{1F300}'..='\u{1F5FF}'),
        })
        .collect()
}

fn random_scalar(rng: &mut impl Rng) -> Value {
    match rng.random_range(0..4) {
        0 => Value::Bool(rng.random()),
        1 => Value::Int(rng.random()),
        2 => Value::Float(random_f64(rng)),
        _ => Value::Str(random_string(rng)),
    }
}

/// Random packet with a valid registered opcode. `Bytes` only appears under
/// the image schema's binary key.
pub fn random_packet(rng: &mut impl Rng) -> Packet {
    let opcode = OPCODES[rng.random_range(0..OPCODES.len())];
    let mut p = Packet::request(opcode, rng.random());
    if rng.random_bool(0.5) {
        p.status = Some(if rng.random_bool(0.8) { Status::Ok } else { Status::Error });
    }
    if rng.random_bool(0.8) {
        let mut payload = Payload::new();
        for i in 0..rng.random_range(0..6) {
            let v = if rng.random_bool(0.2) {
                Value::Array((0..rng.random_range(0..4)).map(|_| random_scalar(rng)).collect())
            } else {
                random_scalar(rng)
            };
            payload.insert(format!("k{i}_{}", random_string(rng)), v);
        }
        if opcode == GET_DATA && rng.random_bool(0.7) {
            let mut px = vec![0u8; rng.random_range(0..2048)];
            rng.fill_bytes(&mut px);
            payload.insert("pixels".into(), Value::Bytes(px));
        }
        if opcode == SET_MOTOR {
            payload.insert("v_mps".into(), Value::Float(random_f64(rng)));
        }
        if opcode == GET_STATE && rng.random_bool(0.3) {
            payload.insert("x".into(), Value::Float(random_f64(rng)));
        }
        p.payload = Some(payload);
    }
    p
}

fn value_bits_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(a, b)| value_bits_eq(a, b))
        }
        (a, b) => a == b,
    }
}

/// Equality that also distinguishes `0.0` from `-0.0`.
pub fn bit_exact(a: &Packet, b: &Packet) -> bool {
    a.opcode == b.opcode
        && a.time_us == b.time_us
        && a.status == b.status
        && match (&a.payload, &b.payload) {
            (None, None) => true,
            (Some(x), Some(y)) => {
                x.len() == y.len()
                    && x.iter().zip(y).all(|((ka, va), (kb, vb))| ka == kb && value_bits_eq(va, vb))
            }
            _ => false,
        }
}
