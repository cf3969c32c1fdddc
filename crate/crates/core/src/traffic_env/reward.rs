use serde::{Deserialize, Serialize};

use super::config::RewardConfig;
use crate::env::AgentStatus;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("target speed must be positive, got {0}")]
    NonPositiveTarget(f64),
}

/// The three additive reward terms of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_terminal: f64,
    pub r_danger: f64,
    pub r_speed: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(r_terminal: f64, r_danger: f64, r_speed: f64) -> Self {
        Self {
            r_terminal,
            r_danger,
            r_speed,
            total: r_terminal + r_danger + r_speed,
        }
    }
}

/// Danger events observed for one agent in the current step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub status: Option<AgentStatus>,
    pub yield_violation: bool,
    pub safety_violation: bool,
}

/// Linear ramp up to `k_p` at the target speed, then a descent with slope
/// `k_n / s_t`.
pub fn r_speed(actual: f64, target: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
    if !(target > 0.0) {
        return Err(RewardError::NonPositiveTarget(target));
    }
    Ok(if actual <= target {
        actual / target * cfg.k_p
    } else {
        cfg.k_p - (actual - target) / target * cfg.k_n
    })
}

pub fn r_terminal(status: AgentStatus, cfg: &RewardConfig) -> f64 {
    match status {
        AgentStatus::Active => 0.0,
        AgentStatus::ReachedGoal => cfg.terminal_goal,
        AgentStatus::Crashed => cfg.terminal_crash,
        AgentStatus::TimedOut => cfg.terminal_timeout,
    }
}

/// Yield takes precedence over the safety penalty; the two never add up.
pub fn r_danger(events: &StepEvents, cfg: &RewardConfig) -> f64 {
    if events.yield_violation {
        -cfg.k_y
    } else if events.safety_violation {
        -cfg.k_s
    } else {
        0.0
    }
}

pub fn compute_reward(
    speed: f64,
    target_speed: f64,
    events: &StepEvents,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let terminal = r_terminal(events.status.unwrap_or(AgentStatus::Active), cfg);
    Ok(RewardBreakdown::new(
        terminal,
        r_danger(events, cfg),
        r_speed(speed, target_speed, cfg)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_term_values() {
        let cfg = RewardConfig::default();
        assert_eq!(r_speed(6.0, 6.0, &cfg).unwrap(), 0.001);
        assert_eq!(r_speed(0.0, 6.0, &cfg).unwrap(), 0.0);
        assert_eq!(r_speed(12.0, 6.0, &cfg).unwrap(), 0.001 - 0.03);
        assert!(r_speed(1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn goal_at_target_speed() {
        let cfg = RewardConfig::default();
        let events = StepEvents {
            status: Some(AgentStatus::ReachedGoal),
            ..Default::default()
        };
        let r = compute_reward(6.0, 6.0, &events, &cfg).unwrap();
        assert_eq!(r.total, 1.0 + 0.0 + 0.001);
    }

    #[test]
    fn yield_precedes_safety() {
        let cfg = RewardConfig::default();
        let events = StepEvents {
            status: None,
            yield_violation: true,
            safety_violation: true,
        };
        let r = compute_reward(6.0, 6.0, &events, &cfg).unwrap();
        assert_eq!(r.r_danger, -0.05);
        assert_eq!(r.total, 0.0 - 0.05 + 0.001);
    }

    #[test]
    fn idle_agent_gets_nothing() {
        let cfg = RewardConfig::default();
        let r = compute_reward(0.0, 6.0, &StepEvents::default(), &cfg).unwrap();
        assert_eq!(r.total, 0.0);
    }
}
