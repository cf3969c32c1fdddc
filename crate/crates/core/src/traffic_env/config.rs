use serde::{Deserialize, Serialize};

/// What bounds the effect of the accelerate command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedCapMode {
    /// Accelerating stops at `v_max`.
    GlobalCap,
    /// Accelerating stops at the vehicle's own target speed.
    TargetCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Simulation tick (s).
    pub dt: f64,
    pub max_vehicles: usize,
    /// Global speed cap (m/s).
    pub v_max: f64,
    /// Acceleration command (m/s²).
    pub accel: f64,
    /// Braking command (m/s², negative).
    pub brake: f64,
    /// Per-agent episode time limit (s).
    pub episode_time_limit: f64,
    pub target_speed_min: f64,
    pub target_speed_max: f64,
    pub speed_cap_mode: SpeedCapMode,
    pub seed: u64,
    /// Free length of entry lane needed before spawning on it (m).
    pub spawn_clearance: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    /// Normalization for the distance-to-goal input (m).
    pub distance_norm: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_vehicles: 6,
            v_max: 12.0,
            accel: 1.0,
            brake: -2.0,
            episode_time_limit: 40.0,
            target_speed_min: 5.0,
            target_speed_max: 8.0,
            speed_cap_mode: SpeedCapMode::GlobalCap,
            seed: 0,
            spawn_clearance: 10.0,
            vehicle_length: 4.0,
            vehicle_width: 1.8,
            distance_norm: 200.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.accel > 0.0 && self.brake < 0.0) {
            return Err("accel must be positive and brake negative".into());
        }
        if !(self.v_max > 0.0) {
            return Err("v_max must be positive".into());
        }
        if !(self.episode_time_limit > 0.0) {
            return Err("episode_time_limit must be positive".into());
        }
        if !(self.target_speed_min > 0.0 && self.target_speed_min <= self.target_speed_max) {
            return Err("target speed range must be positive and ordered".into());
        }
        if !(self.vehicle_length > 0.0 && self.vehicle_width > 0.0) {
            return Err("vehicle footprint must be positive".into());
        }
        if !(self.distance_norm > 0.0) {
            return Err("distance_norm must be positive".into());
        }
        Ok(())
    }
}

/// Reward shaping weights and terminal values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Penalty for failing to yield when entering.
    pub k_y: f64,
    /// Penalty for violating the safety distance.
    pub k_s: f64,
    /// Peak of the speed term, reached at the target speed.
    pub k_p: f64,
    /// Slope of the speed term above the target speed.
    pub k_n: f64,
    pub terminal_goal: f64,
    pub terminal_crash: f64,
    pub terminal_timeout: f64,
    /// Time used to turn a speed into a look-ahead distance (s).
    pub lookahead_horizon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k_y: 0.05,
            k_s: 0.05,
            k_p: 0.001,
            k_n: 0.03,
            terminal_goal: 1.0,
            terminal_crash: -1.0,
            terminal_timeout: -1.0,
            lookahead_horizon: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, k) in [
            ("k_y", self.k_y),
            ("k_s", self.k_s),
            ("k_p", self.k_p),
            ("k_n", self.k_n),
        ] {
            if !(k >= 0.0) {
                return Err(format!("{name} must be non-negative, got {k}"));
            }
        }
        if !(self.lookahead_horizon >= 0.0) {
            return Err("lookahead_horizon must be non-negative".into());
        }
        Ok(())
    }
}
