use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, SpeedCapMode};
use crate::env::{AgentId, AgentStatus};
use crate::geometry::OrientedRect;
use crate::scenario::PathSpec;

/// Longitudinal command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accelerate = 0,
    Brake = 1,
    Maintain = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Accelerate, Action::Brake, Action::Maintain];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accelerate" | "accel" => Ok(Action::Accelerate),
            "brake" => Ok(Action::Brake),
            "maintain" => Ok(Action::Maintain),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleState {
    pub id: AgentId,
    pub path: Arc<PathSpec>,
    /// Arc position of the footprint center along `path`.
    pub s: f64,
    pub speed: f64,
    pub target_speed: f64,
    /// Replaces the elapsed-time ratio input when set.
    pub aggressiveness_override: Option<f64>,
    pub spawn_time: f64,
    pub episode_deadline: f64,
    pub status: AgentStatus,
}

impl VehicleState {
    pub fn footprint(&self, cfg: &EnvConfig) -> OrientedRect {
        let pose = self.path.pose_at(self.s);
        OrientedRect::new(
            pose.position,
            pose.heading,
            cfg.vehicle_length,
            cfg.vehicle_width,
        )
    }

    pub fn remaining_distance(&self) -> f64 {
        self.path.total_length - self.s
    }

    pub fn is_entering(&self, cfg: &EnvConfig) -> bool {
        self.path.is_entering(self.s, 0.5 * cfg.vehicle_length)
    }

    pub fn is_on_ring(&self, cfg: &EnvConfig) -> bool {
        self.path.is_on_ring(self.s, 0.5 * cfg.vehicle_length)
    }
}

/// Applies one tick of `action` and integrates the position with the new speed.
pub fn apply_action(v: &VehicleState, action: Action, cfg: &EnvConfig) -> VehicleState {
    let speed = match action {
        Action::Accelerate => {
            let cap = match cfg.speed_cap_mode {
                SpeedCapMode::GlobalCap => cfg.v_max,
                SpeedCapMode::TargetCap => v.target_speed.min(cfg.v_max),
            };
            if v.speed < cap {
                (v.speed + cfg.accel * cfg.dt).clamp(0.0, cap)
            } else {
                v.speed
            }
        }
        Action::Brake => (v.speed + cfg.brake * cfg.dt).max(0.0),
        Action::Maintain => v.speed,
    };
    let s = (v.s + speed * cfg.dt).min(v.path.total_length);
    VehicleState {
        speed,
        s,
        ..v.clone()
    }
}
