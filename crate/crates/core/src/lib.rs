//! Concurrent depth and relative-pose estimation for two camera-equipped
//! unicycle robots.
//!
//! Each robot runs one nonlinear observer per tracked point to recover its
//! inverse depth from the feature track and the robot's own motion
//! ([`depth`]). The robots exchange their per-point estimates and inputs
//! ([`agent`]), and an extended Kalman filter fuses both sides into the
//! planar pose of one robot relative to the other ([`relpose`]). A
//! deterministic simulator ([`sim`]) and a scenario harness ([`scenario`])
//! drive the whole pipeline.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod relpose;
pub mod scenario;
pub mod sim;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Identifier shared by both robots for the same physical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentId {
    A,
    B,
}

impl AgentId {
    pub fn peer(self) -> AgentId {
        match self {
            AgentId::A => AgentId::B,
            AgentId::B => AgentId::A,
        }
    }
}

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentId::A => f.write_str("A"),
            AgentId::B => f.write_str("B"),
        }
    }
}
