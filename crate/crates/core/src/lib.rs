//! Multi-agent roundabout traffic simulator with an n-step advantage
//! actor-critic training stack.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod rl_core;
pub mod scenario;
pub mod traffic_env;
pub mod trainer;
pub mod validation_env;
