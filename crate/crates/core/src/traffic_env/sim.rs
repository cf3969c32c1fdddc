use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EnvConfig, RewardConfig};
use super::reward::{compute_reward, RewardBreakdown, StepEvents};
use super::rules::{detect_collisions, safety_violation, yield_violation};
use super::vehicle::{apply_action, Action, VehicleState};
use crate::env::{AgentId, AgentStatus, EnvError, EnvStep, MultiAgentEnv, Observation, Transition};
use crate::scenario::{path_for, rasterize_view, PathSpec, RoundaboutMap, ViewLayers, LEG_COUNT};

/// Frames kept in every observation.
pub const FRAME_STACK: usize = 4;
/// Length of the numeric observation vector.
pub const NUMERIC_INPUTS: usize = 4;

/// How newly spawned vehicles get an aggressiveness override.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum AggressivenessDraw {
    /// Elapsed-time ratio, as during training.
    #[default]
    None,
    Uniform {
        low: f64,
        high: f64,
    },
    Fixed(f64),
}

/// Test-time control over spawning.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpawnProfile {
    pub aggressiveness: AggressivenessDraw,
    /// Cap on vehicles created by the spawn policy, below `max_vehicles`.
    pub max_spawned: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutcome {
    pub id: AgentId,
    pub reward: RewardBreakdown,
    pub status: AgentStatus,
    pub speed: f64,
    pub s: f64,
    pub observation: Option<Observation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficStep {
    pub step: u64,
    pub sim_time: f64,
    pub outcomes: Vec<AgentOutcome>,
    pub spawned: Vec<(AgentId, Observation)>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrafficEnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
}

/// Single-lane roundabout populated by up to `max_vehicles` agents.
#[derive(Clone, Debug)]
pub struct TrafficEnv {
    map: Arc<RoundaboutMap>,
    paths: Vec<Arc<PathSpec>>,
    cfg: EnvConfig,
    reward: RewardConfig,
    rng: ChaCha8Rng,
    step_count: u64,
    vehicles: Vec<VehicleState>,
    frames: BTreeMap<AgentId, VecDeque<Arc<ViewLayers>>>,
    next_id: AgentId,
    profile: SpawnProfile,
}

impl TrafficEnv {
    pub fn new(
        map: Arc<RoundaboutMap>,
        cfg: EnvConfig,
        reward: RewardConfig,
    ) -> Result<Self, TrafficEnvError> {
        cfg.validate().map_err(TrafficEnvError::Config)?;
        reward.validate().map_err(TrafficEnvError::Config)?;
        let mut paths = Vec::with_capacity(LEG_COUNT * LEG_COUNT);
        for entry in 0..LEG_COUNT {
            for exit in 0..LEG_COUNT {
                paths.push(Arc::new(path_for(&map, entry, exit, map.sample_step)?));
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            map,
            paths,
            cfg,
            reward,
            rng,
            step_count: 0,
            vehicles: Vec::new(),
            frames: BTreeMap::new(),
            next_id: 1,
            profile: SpawnProfile::default(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn map(&self) -> &RoundaboutMap {
        &self.map
    }

    pub fn path(&self, entry: usize, exit: usize) -> &Arc<PathSpec> {
        &self.paths[entry * LEG_COUNT + exit]
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: AgentId) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn sim_time(&self) -> f64 {
        self.step_count as f64 * self.cfg.dt
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_spawn_profile(&mut self, profile: SpawnProfile) {
        self.profile = profile;
    }

    pub fn reseed(&mut self, seed: u64) {
        self.cfg.seed = seed;
    }

    /// Empties the world and rewinds the clock without spawning anything.
    pub fn clear(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        self.step_count = 0;
        self.vehicles.clear();
        self.frames.clear();
        self.next_id = 1;
    }

    /// Restarts at t = 0, runs the spawn policy once and fills every frame
    /// stack by repeating the first rendered frame.
    pub fn reset_world(&mut self) -> Vec<(AgentId, Observation)> {
        self.clear();
        self.spawn_policy();
        let ids: Vec<AgentId> = self.vehicles.iter().map(|v| v.id).collect();
        ids.into_iter()
            .map(|id| {
                self.push_frame(id);
                (id, self.observation(id))
            })
            .collect()
    }

    /// Advances every active vehicle by one tick with its action.
    pub fn step_joint(
        &mut self,
        actions: &BTreeMap<AgentId, Action>,
    ) -> Result<TrafficStep, EnvError> {
        for v in &self.vehicles {
            if !actions.contains_key(&v.id) {
                return Err(EnvError::MissingAction(v.id));
            }
        }
        if let Some(id) = actions.keys().find(|id| self.vehicle(**id).is_none()) {
            return Err(EnvError::UnknownAgent(*id));
        }

        let mut moved: Vec<VehicleState> = self
            .vehicles
            .iter()
            .map(|v| apply_action(v, actions[&v.id], &self.cfg))
            .collect();
        self.step_count += 1;
        let now = self.sim_time();

        let crashed: std::collections::BTreeSet<AgentId> = detect_collisions(&moved, &self.cfg)
            .into_iter()
            .flat_map(|(a, b)| [a, b])
            .collect();
        for v in &mut moved {
            v.status = if crashed.contains(&v.id) {
                AgentStatus::Crashed
            } else if v.s >= v.path.total_length {
                AgentStatus::ReachedGoal
            } else if now - v.spawn_time >= self.cfg.episode_time_limit - 1e-9 {
                AgentStatus::TimedOut
            } else {
                AgentStatus::Active
            };
        }

        let mut rewards = Vec::with_capacity(moved.len());
        for v in &moved {
            let events = StepEvents {
                status: Some(v.status),
                yield_violation: yield_violation(v, &moved, &self.cfg, &self.reward),
                safety_violation: safety_violation(v, &moved, &self.cfg, &self.reward),
            };
            let r = compute_reward(v.speed, v.target_speed, &events, &self.reward)
                .expect("target speeds are validated positive at spawn");
            rewards.push(r);
        }

        self.vehicles = moved.iter().filter(|v| !v.status.is_terminal()).cloned().collect();
        for v in moved.iter().filter(|v| v.status.is_terminal()) {
            self.frames.remove(&v.id);
        }
        let spawned_id = self.spawn_policy();

        let active: Vec<AgentId> = self.vehicles.iter().map(|v| v.id).collect();
        for id in &active {
            self.push_frame(*id);
        }
        let outcomes = moved
            .iter()
            .zip(rewards)
            .map(|(v, reward)| AgentOutcome {
                id: v.id,
                reward,
                status: v.status,
                speed: v.speed,
                s: v.s,
                observation: (!v.status.is_terminal()).then(|| self.observation(v.id)),
            })
            .collect();
        let spawned = spawned_id
            .map(|id| vec![(id, self.observation(id))])
            .unwrap_or_default();
        Ok(TrafficStep {
            step: self.step_count,
            sim_time: now,
            outcomes,
            spawned,
        })
    }

    fn entry_blocked(&self, entry: usize) -> bool {
        let half = 0.5 * self.cfg.vehicle_length;
        self.vehicles
            .iter()
            .any(|v| v.path.entry_id == entry && v.s - half < self.cfg.spawn_clearance)
    }

    /// Spawns at most one vehicle on a random unblocked entry.
    pub fn spawn_policy(&mut self) -> Option<AgentId> {
        let limit = self
            .profile
            .max_spawned
            .map_or(self.cfg.max_vehicles, |m| m.min(self.cfg.max_vehicles));
        if self.vehicles.len() >= limit {
            return None;
        }
        let free: Vec<usize> = (0..LEG_COUNT).filter(|&e| !self.entry_blocked(e)).collect();
        if free.is_empty() {
            return None;
        }
        let entry = free[self.rng.gen_range(0..free.len())];
        let exit = self.rng.gen_range(0..LEG_COUNT);
        let target = self
            .rng
            .gen_range(self.cfg.target_speed_min..=self.cfg.target_speed_max);
        let aggressiveness = match self.profile.aggressiveness {
            AggressivenessDraw::None => None,
            AggressivenessDraw::Uniform { low, high } => Some(self.rng.gen_range(low..=high)),
            AggressivenessDraw::Fixed(x) => Some(x),
        };
        Some(self.insert_vehicle(entry, exit, target, aggressiveness))
    }

    /// Places a specific vehicle at the start of `entry` if that entry is clear
    /// and capacity allows. Its frame stack is filled immediately.
    pub fn try_spawn(
        &mut self,
        entry: usize,
        exit: usize,
        target_speed: f64,
        aggressiveness: Option<f64>,
    ) -> Option<AgentId> {
        if entry >= LEG_COUNT
            || exit >= LEG_COUNT
            || !(target_speed > 0.0)
            || self.vehicles.len() >= self.cfg.max_vehicles
            || self.entry_blocked(entry)
        {
            return None;
        }
        let id = self.insert_vehicle(entry, exit, target_speed, aggressiveness);
        self.push_frame(id);
        Some(id)
    }

    /// Puts a vehicle anywhere on a route, ignoring the entry clearance rule.
    /// Meant for staging scenarios; capacity and path bounds still apply.
    pub fn place_vehicle(
        &mut self,
        entry: usize,
        exit: usize,
        s: f64,
        speed: f64,
        target_speed: f64,
    ) -> Option<AgentId> {
        if entry >= LEG_COUNT
            || exit >= LEG_COUNT
            || !(target_speed > 0.0)
            || !(speed >= 0.0)
            || self.vehicles.len() >= self.cfg.max_vehicles
        {
            return None;
        }
        if !(0.0..self.path(entry, exit).total_length).contains(&s) {
            return None;
        }
        let id = self.insert_vehicle(entry, exit, target_speed, None);
        let v = self.vehicles.last_mut().expect("just inserted");
        v.s = s;
        v.speed = speed;
        self.push_frame(id);
        Some(id)
    }

    fn insert_vehicle(
        &mut self,
        entry: usize,
        exit: usize,
        target_speed: f64,
        aggressiveness: Option<f64>,
    ) -> AgentId {
        let id = self.next_id;
        self.next_id += 1;
        let now = self.sim_time();
        self.vehicles.push(VehicleState {
            id,
            path: Arc::clone(self.path(entry, exit)),
            s: 0.0,
            speed: 0.0,
            target_speed,
            aggressiveness_override: aggressiveness,
            spawn_time: now,
            episode_deadline: now + self.cfg.episode_time_limit,
            status: AgentStatus::Active,
        });
        id
    }

    /// Current semantic view of vehicle `id`.
    pub fn render(&self, id: AgentId) -> Option<ViewLayers> {
        let ego = self.vehicle(id)?;
        let rects: Vec<_> = self.vehicles.iter().map(|v| v.footprint(&self.cfg)).collect();
        Some(rasterize_view(
            &self.map,
            &rects,
            ego.path.pose_at(ego.s),
            &ego.path,
            ego.s,
        ))
    }

    fn push_frame(&mut self, id: AgentId) {
        let Some(frame) = self.render(id).map(Arc::new) else {
            return;
        };
        let stack = self.frames.entry(id).or_default();
        if stack.is_empty() {
            stack.extend(std::iter::repeat_n(frame, FRAME_STACK));
        } else {
            stack.push_back(frame);
            while stack.len() > FRAME_STACK {
                stack.pop_front();
            }
        }
    }

    /// Frame stack plus numeric inputs of an active vehicle.
    pub fn observation(&self, id: AgentId) -> Observation {
        let v = self.vehicle(id).expect("observation of an active vehicle");
        Observation {
            frames: self.frames[&id].iter().cloned().collect(),
            numeric: numeric_inputs(v, self.sim_time(), &self.cfg).to_vec(),
        }
    }
}

/// `[speed / v_max, target / v_max, elapsed-time ratio, remaining / D_norm]`.
///
/// An aggressiveness override replaces the elapsed-time ratio verbatim.
pub fn numeric_inputs(agent: &VehicleState, sim_time: f64, cfg: &EnvConfig) -> [f64; NUMERIC_INPUTS] {
    let ratio = agent
        .aggressiveness_override
        .unwrap_or((sim_time - agent.spawn_time) / cfg.episode_time_limit);
    [
        agent.speed / cfg.v_max,
        agent.target_speed / cfg.v_max,
        ratio,
        agent.remaining_distance() / cfg.distance_norm,
    ]
}

impl MultiAgentEnv for TrafficEnv {
    fn num_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn reset(&mut self) -> Vec<(AgentId, Observation)> {
        self.reset_world()
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, usize>) -> Result<EnvStep, EnvError> {
        let mut joint = BTreeMap::new();
        for (&id, &a) in actions {
            joint.insert(id, Action::from_index(a).ok_or(EnvError::InvalidAction(a))?);
        }
        let step = self.step_joint(&joint)?;
        Ok(EnvStep {
            transitions: step
                .outcomes
                .into_iter()
                .map(|o| Transition {
                    agent: o.id,
                    reward: o.reward.total,
                    status: o.status,
                    speed: o.speed,
                    observation: o.observation,
                })
                .collect(),
            spawned: step.spawned,
        })
    }

    fn active_agents(&self) -> Vec<AgentId> {
        self.vehicles.iter().map(|v| v.id).collect()
    }
}
