//! Event-based state estimation and control over a lossy broadcast bus.

pub mod agent;
pub mod analysis;
pub mod bus;
pub mod model;
pub mod norm;
pub mod reference;
pub mod rng;
pub mod shipped;
pub mod sim;
pub mod trigger;
pub mod verify;
