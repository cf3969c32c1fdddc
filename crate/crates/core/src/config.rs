//! The run configuration file: one flat JSON object whose keys are all
//! optional. Missing keys take their documented defaults; unknown keys and
//! values of the wrong type are rejected with the offending line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{SweepParameter, SweepSpec};
use crate::nn::{NetConfig, VisualConfig};
use crate::rl_core::RlConfig;
use crate::scenario::GeometryConfig;
use crate::traffic_env::{EnvConfig, RewardConfig, SpeedCapMode};
use crate::trainer::TrainerConfig;
use crate::validation_env::{ChainConfig, ValidationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    // environment
    pub dt: f64,
    pub max_vehicles: usize,
    pub v_max: f64,
    pub accel: f64,
    pub brake: f64,
    pub episode_time_limit: f64,
    pub target_speed_min: f64,
    pub target_speed_max: f64,
    pub speed_cap_mode: SpeedCapMode,
    pub spawn_clearance: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub distance_norm: f64,

    // reward
    pub k_y: f64,
    pub k_s: f64,
    pub k_p: f64,
    pub k_n: f64,
    pub terminal_goal: f64,
    pub terminal_crash: f64,
    pub terminal_timeout: f64,
    pub lookahead_horizon: f64,

    // geometry
    pub ring_center: [f64; 2],
    pub ring_radius: f64,
    pub lane_width: f64,
    pub leg_length: f64,
    pub leg_angles_deg: Vec<f64>,
    pub junction_radius: f64,
    pub sample_step: f64,

    // learning
    pub n: usize,
    pub gamma: f64,
    pub action_repeat: usize,
    pub entropy_coef: f64,
    pub value_loss_coef: f64,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,

    // network
    /// Feed the rendered views through the convolutional trunk.
    pub visual: bool,
    pub numeric_hidden: usize,
    pub merge_hidden: usize,

    // trainer
    pub n_env: usize,
    pub n_ag: usize,
    pub total_episodes: u64,
    pub max_env_steps: Option<u64>,
    /// Episodes between periodic checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Checkpoint to start training from instead of a fresh init.
    pub init_checkpoint: Option<PathBuf>,

    // validation
    pub validation_seeds: Vec<u64>,
    pub validation_steps: u64,
    pub validation_eval_every: u64,
    pub validation_hidden: usize,

    // evaluation
    pub sweep_parameter: SweepParameter,
    pub sweep_values: Vec<f64>,
    pub episodes_per_value: usize,
    pub action_repeat_eval: usize,
    pub checkpoint: Option<PathBuf>,
    pub background_vehicles: usize,
    pub warmup_steps: u64,
    pub probe_entry: usize,
    pub probe_exit: usize,
    pub background_aggressiveness: f64,

    // outputs
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let reward = RewardConfig::default();
        let geo = GeometryConfig::default();
        let rl = RlConfig::default();
        let tr = TrainerConfig::default();
        let net = NetConfig::default();
        let val = ValidationConfig::default();
        let sweep = SweepSpec::default();
        Self {
            seed: 0,
            dt: env.dt,
            max_vehicles: env.max_vehicles,
            v_max: env.v_max,
            accel: env.accel,
            brake: env.brake,
            episode_time_limit: env.episode_time_limit,
            target_speed_min: env.target_speed_min,
            target_speed_max: env.target_speed_max,
            speed_cap_mode: env.speed_cap_mode,
            spawn_clearance: env.spawn_clearance,
            vehicle_length: env.vehicle_length,
            vehicle_width: env.vehicle_width,
            distance_norm: env.distance_norm,
            k_y: reward.k_y,
            k_s: reward.k_s,
            k_p: reward.k_p,
            k_n: reward.k_n,
            terminal_goal: reward.terminal_goal,
            terminal_crash: reward.terminal_crash,
            terminal_timeout: reward.terminal_timeout,
            lookahead_horizon: reward.lookahead_horizon,
            ring_center: geo.ring_center,
            ring_radius: geo.ring_radius,
            lane_width: geo.lane_width,
            leg_length: geo.leg_length,
            leg_angles_deg: geo.leg_angles_deg,
            junction_radius: geo.junction_radius,
            sample_step: geo.sample_step,
            n: rl.n,
            gamma: rl.gamma,
            action_repeat: rl.action_repeat,
            entropy_coef: rl.entropy_coef,
            value_loss_coef: rl.value_loss_coef,
            lr: tr.lr,
            rmsprop_decay: tr.rmsprop_decay,
            rmsprop_eps: tr.rmsprop_eps,
            visual: true,
            numeric_hidden: net.numeric_hidden,
            merge_hidden: net.merge_hidden,
            n_env: tr.n_env,
            n_ag: tr.n_ag,
            total_episodes: tr.total_episodes,
            max_env_steps: tr.max_env_steps,
            checkpoint_every: 1000,
            init_checkpoint: None,
            validation_seeds: vec![0, 1, 2],
            validation_steps: val.max_env_steps,
            validation_eval_every: val.eval_every,
            validation_hidden: val.hidden,
            sweep_parameter: sweep.parameter,
            sweep_values: sweep.values,
            episodes_per_value: sweep.episodes_per_value,
            action_repeat_eval: sweep.action_repeat_eval,
            checkpoint: sweep.checkpoint,
            background_vehicles: sweep.background_vehicles,
            warmup_steps: sweep.warmup_steps,
            probe_entry: sweep.probe_entry,
            probe_exit: sweep.probe_exit,
            background_aggressiveness: sweep.background_aggressiveness,
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{key}` at line {line}, column {column}")]
    UnknownKey {
        key: String,
        line: usize,
        column: usize,
    },
    #[error("type mismatch at line {line}, column {column}: {message}")]
    TypeMismatch {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Drops serde_json's trailing position, which the error variants carry.
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

impl RunConfig {
    /// Strict parse of a JSON document followed by semantic validation.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        // serde would also accept a positional array for a struct
        let trimmed = text.trim_start();
        if !trimmed.is_empty() && !trimmed.starts_with('{') {
            let offset = text.len() - trimmed.len();
            let line = text[..offset].matches('\n').count() + 1;
            let column = offset - text[..offset].rfind('\n').map_or(0, |i| i + 1) + 1;
            return Err(ConfigError::TypeMismatch {
                line,
                column,
                message: "the configuration must be a JSON object".into(),
            });
        }
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let (line, column) = (e.line(), e.column());
            let message = strip_position(&e.to_string());
            match e.classify() {
                serde_json::error::Category::Data => {
                    if let Some(rest) = message.strip_prefix("unknown field `") {
                        let key = rest.split('`').next().unwrap_or_default().to_string();
                        ConfigError::UnknownKey { key, line, column }
                    } else {
                        ConfigError::TypeMismatch { line, column, message }
                    }
                }
                _ => ConfigError::Syntax { line, column, message },
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            self.env().validate(),
            self.reward().validate(),
            self.rl().validate(),
            self.trainer().validate(),
            self.sweep().validate(),
        ];
        for c in checks {
            c.map_err(ConfigError::Invalid)?;
        }
        if self.numeric_hidden == 0 || self.merge_hidden == 0 || self.validation_hidden == 0 {
            return Err(ConfigError::Invalid("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            dt: self.dt,
            max_vehicles: self.max_vehicles,
            v_max: self.v_max,
            accel: self.accel,
            brake: self.brake,
            episode_time_limit: self.episode_time_limit,
            target_speed_min: self.target_speed_min,
            target_speed_max: self.target_speed_max,
            speed_cap_mode: self.speed_cap_mode,
            seed: self.seed,
            spawn_clearance: self.spawn_clearance,
            vehicle_length: self.vehicle_length,
            vehicle_width: self.vehicle_width,
            distance_norm: self.distance_norm,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            k_y: self.k_y,
            k_s: self.k_s,
            k_p: self.k_p,
            k_n: self.k_n,
            terminal_goal: self.terminal_goal,
            terminal_crash: self.terminal_crash,
            terminal_timeout: self.terminal_timeout,
            lookahead_horizon: self.lookahead_horizon,
        }
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            ring_center: self.ring_center,
            ring_radius: self.ring_radius,
            lane_width: self.lane_width,
            leg_length: self.leg_length,
            leg_angles_deg: self.leg_angles_deg.clone(),
            junction_radius: self.junction_radius,
            sample_step: self.sample_step,
        }
    }

    pub fn rl(&self) -> RlConfig {
        RlConfig {
            n: self.n,
            gamma: self.gamma,
            action_repeat: self.action_repeat,
            entropy_coef: self.entropy_coef,
            value_loss_coef: self.value_loss_coef,
        }
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            n_env: self.n_env,
            n_ag: self.n_ag,
            lr: self.lr,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_eps: self.rmsprop_eps,
            total_episodes: self.total_episodes,
            max_env_steps: self.max_env_steps,
            seed: self.seed,
        }
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            visual: self.visual.then(VisualConfig::default),
            numeric_hidden: self.numeric_hidden,
            merge_hidden: self.merge_hidden,
            ..NetConfig::default()
        }
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec {
            parameter: self.sweep_parameter,
            values: self.sweep_values.clone(),
            episodes_per_value: self.episodes_per_value,
            action_repeat_eval: self.action_repeat_eval,
            checkpoint: self.checkpoint.clone(),
            seed: self.seed,
            background_vehicles: self.background_vehicles,
            warmup_steps: self.warmup_steps,
            probe_entry: self.probe_entry,
            probe_exit: self.probe_exit,
            background_aggressiveness: self.background_aggressiveness,
        }
    }

    /// Validation settings for one seed; the learning constants are shared
    /// with the main run except for action repeat, which the chain does not use.
    pub fn validation(&self, seed: u64) -> ValidationConfig {
        ValidationConfig {
            chain: ChainConfig {
                gamma: self.gamma,
                ..ChainConfig::default()
            },
            rl: RlConfig {
                action_repeat: 1,
                ..self.rl()
            },
            hidden: self.validation_hidden,
            lr: self.lr,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_eps: self.rmsprop_eps,
            max_env_steps: self.validation_steps,
            eval_every: self.validation_eval_every,
            seed,
        }
    }
}
