//! Parallel interactive network (PIN) for joint intent detection and slot
//! filling, built on a small reverse-mode autodiff engine.

pub mod checkpoint;
pub mod config;
pub mod cooperation;
pub mod data;
pub mod encoder;
pub mod error;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
