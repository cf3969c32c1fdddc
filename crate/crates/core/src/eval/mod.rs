//! Test-time sweeps: a probe vehicle with a chosen aggressiveness or target
//! speed drives through traffic controlled by the same policy, and its
//! success ratio and average speed are aggregated per swept value.

mod plot;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, AgentStatus, Observation};
use crate::nn::{self, NnError, PolicyValueNet};
use crate::rl_core::{select_action, visual_input, ActionRepeat};
use crate::scenario::RoundaboutMap;
use crate::traffic_env::{
    Action, AggressivenessDraw, EnvConfig, RewardConfig, SpawnProfile, TrafficEnv,
};

pub use plot::{learning_curve_svg, read_rows, sweep_svg, write_rows, LineChart, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Aggressiveness,
    TargetSpeed,
}

impl SweepParameter {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParameter::Aggressiveness => vec![-0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2],
            SweepParameter::TargetSpeed => vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepParameter::Aggressiveness => "aggressiveness",
            SweepParameter::TargetSpeed => "target speed (m/s)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Empty means the default grid of the parameter.
    pub values: Vec<f64>,
    pub episodes_per_value: usize,
    pub action_repeat_eval: usize,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// Vehicles sharing the roundabout with the probe.
    pub background_vehicles: usize,
    /// Steps the background traffic runs before the probe is inserted.
    pub warmup_steps: u64,
    pub probe_entry: usize,
    pub probe_exit: usize,
    /// Aggressiveness of background traffic in a target-speed sweep.
    pub background_aggressiveness: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::Aggressiveness,
            values: Vec::new(),
            episodes_per_value: 200,
            action_repeat_eval: 4,
            checkpoint: None,
            seed: 0,
            background_vehicles: 6,
            warmup_steps: 50,
            probe_entry: 0,
            probe_exit: 2,
            background_aggressiveness: 0.5,
        }
    }
}

impl SweepSpec {
    pub fn grid(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.parameter.default_values()
        } else {
            self.values.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.episodes_per_value == 0 {
            return Err("episodes_per_value must be at least 1".into());
        }
        if !matches!(self.action_repeat_eval, 1 | 4) {
            return Err(format!("action_repeat_eval must be 1 or 4, got {}", self.action_repeat_eval));
        }
        if self.grid().iter().any(|v| !v.is_finite()) {
            return Err("sweep values must be finite".into());
        }
        if self.parameter == SweepParameter::TargetSpeed && self.grid().iter().any(|&v| v <= 0.0) {
            return Err("target speeds must be positive".into());
        }
        if self.probe_entry >= 3 || self.probe_exit >= 3 {
            return Err("probe entry and exit must name one of the three legs".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub success_ratio: f64,
    /// Mean over episodes of the probe's mean speed (m/s).
    pub avg_speed: f64,
    pub episodes: usize,
    pub crashes: usize,
    pub timeouts: usize,
}

impl SweepRow {
    pub fn goals(&self) -> usize {
        self.episodes - self.crashes - self.timeouts
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] NnError),
    #[error("simulation failed: {0}")]
    Env(String),
    #[error("cannot summarize an empty sweep")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of one probe episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeEpisode {
    pub status: AgentStatus,
    pub mean_speed: f64,
    pub steps: u64,
}

/// Seed of episode `k`; identical for every swept value so that values are
/// compared on the same traffic draws.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Steps the probe may wait for its entry to clear before giving up.
const MAX_ENTRY_WAIT: u64 = 2_000;

/// Drives any number of vehicles with one policy, sampling on decision
/// frames and holding each vehicle's action in between.
pub struct PolicyDriver<'a> {
    net: &'a PolicyValueNet,
    repeat: usize,
    rng: ChaCha8Rng,
    held: BTreeMap<AgentId, ActionRepeat>,
    visual: Vec<f64>,
}

impl<'a> PolicyDriver<'a> {
    pub fn new(net: &'a PolicyValueNet, repeat: usize, seed: u64) -> Self {
        Self {
            net,
            repeat: repeat.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            held: BTreeMap::new(),
            visual: Vec::new(),
        }
    }

    /// Forgets the held action of a vehicle that left.
    pub fn forget(&mut self, id: AgentId) {
        self.held.remove(&id);
    }

    pub fn act(&mut self, id: AgentId, obs: &Observation) -> Result<Action, NnError> {
        let state = self.held.entry(id).or_default();
        let logits = if state.decision_due(self.repeat) {
            visual_input(self.net, obs, &mut self.visual);
            self.net.forward(&self.visual, &obs.numeric)?.logits
        } else {
            Vec::new()
        };
        let d = select_action(&logits, &mut self.rng, state, self.repeat);
        Ok(Action::from_index(d.action).expect("policy has three actions"))
    }
}

/// Runs one probe episode with every vehicle driven by `net`.
pub fn run_probe_episode(
    env: &mut TrafficEnv,
    net: &PolicyValueNet,
    spec: &SweepSpec,
    value: f64,
    seed: u64,
) -> Result<ProbeEpisode, EvalError> {
    let background = match spec.parameter {
        SweepParameter::Aggressiveness => AggressivenessDraw::Uniform { low: 0.0, high: 1.0 },
        SweepParameter::TargetSpeed => AggressivenessDraw::Fixed(spec.background_aggressiveness),
    };
    env.reseed(seed);
    // background traffic leaves one slot free for the probe until it enters
    env.set_spawn_profile(SpawnProfile {
        aggressiveness: background,
        max_spawned: Some(spec.background_vehicles),
    });
    env.clear();
    let mut driver = PolicyDriver::new(net, spec.action_repeat_eval, seed ^ 0xA11C_E5ED);
    let (probe_target, probe_aggr) = match spec.parameter {
        SweepParameter::Aggressiveness => {
            let cfg = env.config();
            let mid = 0.5 * (cfg.target_speed_min + cfg.target_speed_max);
            (mid, value)
        }
        SweepParameter::TargetSpeed => (value, spec.background_aggressiveness),
    };

    let mut probe: Option<AgentId> = None;
    let mut speed_sum = 0.0;
    let mut steps = 0u64;
    let mut waited = 0u64;
    loop {
        if probe.is_none() && env.step_count() >= spec.warmup_steps {
            // no new background vehicle may take the probe's place at the entry
            env.set_spawn_profile(SpawnProfile {
                aggressiveness: background,
                max_spawned: Some(0),
            });
            probe = env.try_spawn(spec.probe_entry, spec.probe_exit, probe_target, Some(probe_aggr));
            if probe.is_some() {
                env.set_spawn_profile(SpawnProfile {
                    aggressiveness: background,
                    max_spawned: None,
                });
            } else {
                waited += 1;
                if waited > MAX_ENTRY_WAIT {
                    return Err(EvalError::Env("the probe entry never cleared".into()));
                }
            }
        }
        let ids: Vec<AgentId> = env.vehicles().iter().map(|v| v.id).collect();
        let mut actions = BTreeMap::new();
        for id in ids {
            let obs = env.observation(id);
            actions.insert(id, driver.act(id, &obs)?);
        }
        let step = env
            .step_joint(&actions)
            .map_err(|e| EvalError::Env(e.to_string()))?;
        for o in &step.outcomes {
            if o.status.is_terminal() {
                driver.forget(o.id);
            }
            if Some(o.id) == probe {
                speed_sum += o.speed;
                steps += 1;
                if o.status.is_terminal() {
                    return Ok(ProbeEpisode {
                        status: o.status,
                        mean_speed: speed_sum / steps as f64,
                        steps,
                    });
                }
            }
        }
    }
}

/// Aggregates probe episodes into a row.
pub fn aggregate(value: f64, episodes: &[ProbeEpisode]) -> SweepRow {
    let n = episodes.len();
    let count = |s: AgentStatus| episodes.iter().filter(|e| e.status == s).count();
    let goals = count(AgentStatus::ReachedGoal);
    SweepRow {
        value,
        success_ratio: if n > 0 { goals as f64 / n as f64 } else { 0.0 },
        avg_speed: if n > 0 {
            episodes.iter().map(|e| e.mean_speed).sum::<f64>() / n as f64
        } else {
            0.0
        },
        episodes: n,
        crashes: count(AgentStatus::Crashed),
        timeouts: count(AgentStatus::TimedOut),
    }
}

/// Runs the whole sweep with `net`; one row per swept value, in grid order.
pub fn run_sweep(
    spec: &SweepSpec,
    map: Arc<RoundaboutMap>,
    env_cfg: &EnvConfig,
    reward: &RewardConfig,
    net: &PolicyValueNet,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, EvalError> {
    spec.validate().map_err(EvalError::Config)?;
    if net.config().actions != 3 {
        return Err(EvalError::Config("the policy must have three actions".into()));
    }
    let cfg = EnvConfig {
        max_vehicles: spec.background_vehicles + 1,
        ..env_cfg.clone()
    };
    let mut env = TrafficEnv::new(map, cfg, reward.clone()).map_err(|e| EvalError::Env(e.to_string()))?;
    let mut rows = Vec::new();
    for value in spec.grid() {
        let mut episodes = Vec::with_capacity(spec.episodes_per_value);
        for k in 0..spec.episodes_per_value {
            episodes.push(run_probe_episode(&mut env, net, spec, value, episode_seed(spec.seed, k))?);
        }
        let row = aggregate(value, &episodes);
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// [`run_sweep`] with the policy loaded from `spec.checkpoint`.
pub fn run_sweep_from_checkpoint(
    spec: &SweepSpec,
    map: Arc<RoundaboutMap>,
    env_cfg: &EnvConfig,
    reward: &RewardConfig,
    progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, EvalError> {
    let path = spec
        .checkpoint
        .as_ref()
        .ok_or_else(|| EvalError::Config("no checkpoint given".into()))?;
    let net = nn::load(path)?;
    run_sweep(spec, map, env_cfg, reward, &net, progress)
}
