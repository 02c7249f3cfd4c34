//! Adam with a meta-learned gradient warp, its baselines, and a few-shot
//! benchmark harness.

pub mod bench;
pub mod checks;
pub mod config;
pub mod error;
pub mod nn;
pub mod optim;
pub mod tasks;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
