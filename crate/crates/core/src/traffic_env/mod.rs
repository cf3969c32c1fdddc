//! Multi-agent roundabout simulation: kinematics, traffic rules, rewards and
//! observation assembly.

pub mod config;
pub mod reward;
pub mod rules;
mod sim;
pub mod trace;
pub mod vehicle;

pub use config::{EnvConfig, RewardConfig, SpeedCapMode};
pub use reward::{compute_reward, RewardBreakdown, RewardError, StepEvents};
pub use rules::{detect_collisions, leader_gap, safety_violation, yield_violation};
pub use sim::{
    numeric_inputs, AgentOutcome, AggressivenessDraw, SpawnProfile, TrafficEnv, TrafficEnvError,
    TrafficStep, FRAME_STACK, NUMERIC_INPUTS,
};
pub use trace::TraceWriter;
pub use vehicle::{apply_action, Action, VehicleState};
