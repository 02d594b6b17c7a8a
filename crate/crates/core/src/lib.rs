//! Safe reinforcement learning on a speed-limited driving task.
//!
//! Six training algorithms share one deterministic actor-critic backbone:
//! unconstrained TD3, a safety layer, recovery RL, a Lagrangian method,
//! feasible actor-critic, and exact penalty optimization.

pub mod agent;
pub mod backbone;
pub mod config;
pub mod env;
pub mod epo;
pub mod error;
pub mod exact_penalty;
pub mod fac;
pub mod harness;
pub mod lagrangian;
pub mod nn;
pub mod recovery;
pub mod replay;
pub mod safety_layer;

pub use error::{Error, Result};
