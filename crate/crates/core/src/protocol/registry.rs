use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::config::SystemConfig;

pub const GET_DATA: &str = "GET_DATA";
pub const SET_MOTOR: &str = "SET_MOTOR";
pub const ADVANCE: &str = "ADVANCE";
pub const RESET: &str = "RESET";
pub const GET_STATE: &str = "GET_STATE";
pub const SHUTDOWN: &str = "SHUTDOWN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    VpToWorld,
    WorldToVp,
}

/// Known payload shapes. The schema tells the codec which fields are binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadSchema {
    None,
    Image,
    MotorCmd,
    Advance,
    State,
}

impl PayloadSchema {
    /// Payload keys whose values travel as base64 strings.
    pub fn binary_fields(self) -> &'static [&'static str] {
        match self {
            PayloadSchema::Image => &["pixels"],
            _ => &[],
        }
    }

    pub fn is_binary_field(self, key: &str) -> bool {
        self.binary_fields().contains(&key)
    }
}

impl FromStr for PayloadSchema {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => PayloadSchema::None,
            "image" => PayloadSchema::Image,
            "motor_cmd" => PayloadSchema::MotorCmd,
            "advance" => PayloadSchema::Advance,
            "state" => PayloadSchema::State,
            other => return Err(ProtocolError::UnknownSchema(other.to_owned())),
        })
    }
}

impl fmt::Display for PayloadSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadSchema::None => "none",
            PayloadSchema::Image => "image",
            PayloadSchema::MotorCmd => "motor_cmd",
            PayloadSchema::Advance => "advance",
            PayloadSchema::State => "state",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeDescriptor {
    pub name: String,
    pub direction: Direction,
    pub payload_schema: PayloadSchema,
}

impl OpcodeDescriptor {
    pub fn new(name: &str, direction: Direction, payload_schema: PayloadSchema) -> Self {
        OpcodeDescriptor {
            name: name.to_owned(),
            direction,
            payload_schema,
        }
    }
}

/// Opcodes known to both endpoints: the built-ins plus whatever the system
/// configuration declares per module.
#[derive(Debug, Clone)]
pub struct Registry {
    descriptors: BTreeMap<String, OpcodeDescriptor>,
    source_config: Option<PathBuf>,
}

impl Registry {
    pub fn builtin() -> Self {
        use Direction::VpToWorld;
        let mut descriptors = BTreeMap::new();
        for d in [
            OpcodeDescriptor::new(GET_DATA, VpToWorld, PayloadSchema::Image),
            OpcodeDescriptor::new(SET_MOTOR, VpToWorld, PayloadSchema::MotorCmd),
            OpcodeDescriptor::new(ADVANCE, VpToWorld, PayloadSchema::Advance),
            OpcodeDescriptor::new(RESET, VpToWorld, PayloadSchema::None),
            OpcodeDescriptor::new(GET_STATE, VpToWorld, PayloadSchema::State),
            OpcodeDescriptor::new(SHUTDOWN, VpToWorld, PayloadSchema::None),
        ] {
            descriptors.insert(d.name.clone(), d);
        }
        Registry {
            descriptors,
            source_config: None,
        }
    }

    /// Built-ins merged with the opcodes declared by every module of `config`.
    pub fn from_config(config: &SystemConfig) -> Result<Self, ProtocolError> {
        let mut registry = Registry::builtin();
        for module in &config.modules {
            for op in &module.opcodes {
                let schema: PayloadSchema = op.payload_schema.parse()?;
                registry.insert(OpcodeDescriptor {
                    name: op.name.clone(),
                    direction: op.direction,
                    payload_schema: schema,
                })?;
            }
        }
        Ok(registry)
    }

    pub fn insert(&mut self, descriptor: OpcodeDescriptor) -> Result<(), ProtocolError> {
        if descriptor.name.is_empty() {
            return Err(ProtocolError::EmptyOpcode);
        }
        if self.descriptors.contains_key(&descriptor.name) {
            return Err(ProtocolError::DuplicateOpcode(descriptor.name));
        }
        self.descriptors.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&OpcodeDescriptor> {
        self.descriptors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.descriptors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &OpcodeDescriptor> {
        self.descriptors.values()
    }

    pub fn source_config(&self) -> Option<&Path> {
        self.source_config.as_deref()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

/// Loads the system configuration at `config_path` and builds its registry.
pub fn load_registry(config_path: impl AsRef<Path>) -> Result<Registry, ProtocolError> {
    let path = config_path.as_ref();
    let config = SystemConfig::load(path).map_err(|e| ProtocolError::Config(e.to_string()))?;
    let mut registry = Registry::from_config(&config)?;
    registry.source_config = Some(path.to_path_buf());
    Ok(registry)
}
