//! Co-simulation of a nano-drone virtual platform against a world simulator,
//! with energy models for design-space exploration.

pub mod config;
pub mod energy;
pub mod image;
pub mod protocol;
pub mod sync;
pub mod world;
pub mod vp;
pub mod mission;
pub mod dse;
