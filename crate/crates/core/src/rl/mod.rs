//! Offline soft actor-critic and its supporting pieces.

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod features;
pub mod mlp;
pub mod replay;
pub mod sac;
pub mod toy;
