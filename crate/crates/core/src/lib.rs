//! Deterministic closed-loop driving simulation.

pub mod causality;
pub mod controller;
pub mod dynamics;
pub mod env;
pub mod episode_log;
pub mod format;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod policies;
pub mod render;
pub mod rl;
pub mod scenario;
pub mod serde_f64;
pub mod synth;
