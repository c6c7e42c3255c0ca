//! Noise-robust sound event detection toolkit.

pub mod audio;
pub mod error;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
pub mod events;
pub mod synth;
pub mod augment;
pub mod model;
pub mod pipeline;
pub mod metrics;
pub mod experiment;
