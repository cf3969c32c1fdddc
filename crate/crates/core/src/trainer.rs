//! Multi-agent asynchronous training: several environment instances, each
//! driven by one worker thread per agent slot in lock-step, all sharing one
//! master network updated with RMSProp at the end of every agent episode.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, AgentStatus, MultiAgentEnv, Observation, Transition};
use crate::nn::{Gradients, NnError, PolicyValueNet};
use crate::rl_core::{AgentLearner, RlConfig, RlError, RmsProp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Independent environment instances.
    pub n_env: usize,
    /// Agents (worker threads) per instance.
    pub n_ag: usize,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Training stops once this many agent episodes have finished.
    pub total_episodes: u64,
    /// Optional cap on simulation steps per instance.
    pub max_env_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n_env: 1,
            n_ag: 6,
            lr: 7e-4,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-5,
            total_episodes: 1000,
            max_env_steps: None,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_env == 0 || self.n_ag == 0 {
            return Err("n_env and n_ag must be at least 1".into());
        }
        if !(self.lr >= 0.0) {
            return Err("lr must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err("rmsprop_decay must lie in [0, 1)".into());
        }
        if !(self.rmsprop_eps > 0.0) {
            return Err("rmsprop_eps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("worker failed: {0}")]
    Worker(String),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

struct StoreState {
    net: PolicyValueNet,
    opt: RmsProp,
    update_counter: u64,
    version: u64,
}

/// Master parameters and the shared RMSProp statistics.
///
/// Updates are serialized behind a write lock; snapshots take a read lock and
/// therefore always see a complete parameter set.
pub struct GlobalStore {
    state: RwLock<StoreState>,
}

impl GlobalStore {
    pub fn new(net: PolicyValueNet, lr: f64, decay: f64, eps: f64) -> Self {
        let opt = RmsProp::new(net.param_count(), lr, decay, eps);
        Self {
            state: RwLock::new(StoreState {
                net,
                opt,
                update_counter: 0,
                version: 0,
            }),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, StoreState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Applies one RMSProp step and returns the new version.
    pub fn apply(&self, grads: &Gradients) -> Result<u64, NnError> {
        let mut st = self.state.write().unwrap_or_else(|e| e.into_inner());
        if grads.as_slice().len() != st.net.param_count() {
            return Err(NnError::Shape {
                what: "gradient buffer",
                expected: st.net.param_count(),
                got: grads.as_slice().len(),
            });
        }
        let StoreState { net, opt, .. } = &mut *st;
        opt.apply(net.params_mut(), grads.as_slice());
        st.update_counter += 1;
        st.version += 1;
        Ok(st.version)
    }

    pub fn snapshot(&self) -> (PolicyValueNet, u64) {
        let st = self.read();
        (st.net.clone(), st.version)
    }

    /// Overwrites `net` with the master parameters; returns their version.
    pub fn snapshot_into(&self, net: &mut PolicyValueNet) -> Result<u64, NnError> {
        let st = self.read();
        net.copy_from(st.net.params())?;
        Ok(st.version)
    }

    pub fn version(&self) -> u64 {
        self.read().version
    }

    pub fn update_counter(&self) -> u64 {
        self.read().update_counter
    }

    pub fn second_moment(&self) -> Vec<f64> {
        self.read().opt.second_moment.clone()
    }

    pub fn into_net(self) -> PolicyValueNet {
        self.state.into_inner().unwrap_or_else(|e| e.into_inner()).net
    }
}

/// One finished agent episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: u64,
    pub instance: usize,
    pub agent: AgentId,
    pub outcome: AgentStatus,
    pub cum_reward: f64,
    pub mean_speed: f64,
    pub steps: u64,
}

impl EpisodeStats {
    pub fn to_row(&self) -> StatsRow {
        StatsRow {
            episode: self.episode,
            agent: format!("{}:{}", self.instance, self.agent),
            outcome: self.outcome,
            cum_reward: self.cum_reward,
            mean_speed: self.mean_speed,
            steps: self.steps,
        }
    }
}

/// One line of the stats CSV. `agent` reads `instance:id` because vehicle
/// ids are only unique within an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub episode: u64,
    pub agent: String,
    pub outcome: AgentStatus,
    pub cum_reward: f64,
    pub mean_speed: f64,
    pub steps: u64,
}

pub fn read_stats<R: std::io::Read>(input: R) -> csv::Result<Vec<StatsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub type ScriptFn = dyn Fn(AgentId, &Observation) -> usize + Send + Sync;

/// Where actions come from.
#[derive(Clone)]
pub enum Policy {
    /// Sampled from the network; gradients are accumulated and pushed.
    Learned,
    /// A fixed rule. Episodes still end with a (zero) gradient push so the
    /// bookkeeping matches the learned mode.
    Scripted(Arc<ScriptFn>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingReport {
    pub episodes: u64,
    pub pushes: u64,
    /// Simulation steps per instance.
    pub env_steps: Vec<u64>,
}

/// Seed of the sampling stream of `worker` in `instance`.
pub fn worker_seed(seed: u64, instance: usize, worker: usize) -> u64 {
    seed ^ (instance as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (worker as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Default)]
struct Inbox {
    transition: Option<Transition>,
    assigned: Option<(AgentId, Observation)>,
}

struct Shared<E> {
    env: E,
    phase: u64,
    arrived: usize,
    actions: BTreeMap<AgentId, usize>,
    owner: BTreeMap<AgentId, usize>,
    inbox: Vec<Inbox>,
    env_steps: u64,
    stop: bool,
    poisoned: Option<String>,
}

/// Lock-step rendezvous of the workers of one instance. The last worker to
/// arrive advances the environment for everybody.
struct Instance<E> {
    shared: Mutex<Shared<E>>,
    turn: Condvar,
}

impl<E> Instance<E> {
    fn lock(&self) -> MutexGuard<'_, Shared<E>> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn poison(&self, why: String) {
        let mut sh = self.lock();
        sh.poisoned.get_or_insert(why);
        self.turn.notify_all();
    }
}

/// Marks the instance failed if its worker unwinds.
struct PanicGuard<'a, E> {
    instance: &'a Instance<E>,
}

impl<E> Drop for PanicGuard<'_, E> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.instance.poison("a worker panicked".into());
        }
    }
}

struct Ctx<'a> {
    cfg: &'a TrainerConfig,
    rl: &'a RlConfig,
    store: &'a GlobalStore,
    policy: &'a Policy,
    finished: &'a AtomicU64,
    pushes: &'a AtomicU64,
    episode_ids: &'a AtomicU64,
    halt: &'a AtomicBool,
    stats: Option<Sender<EpisodeStats>>,
}

/// Runs the shared-parameter multi-agent actor-critic until `total_episodes`
/// agent episodes have finished or every instance hit `max_env_steps`.
///
/// `make_env(i)` builds instance `i`; it must never host more than `n_ag`
/// agents at once. Episode records are sent to `stats` as they finish.
pub fn run_training<E, F>(
    cfg: &TrainerConfig,
    rl: &RlConfig,
    store: &GlobalStore,
    make_env: F,
    policy: Policy,
    stats: Option<Sender<EpisodeStats>>,
) -> Result<TrainingReport, TrainError>
where
    E: MultiAgentEnv + Send,
    F: Fn(usize) -> E,
{
    run_training_until(cfg, rl, store, make_env, policy, stats, &AtomicBool::new(false))
}

/// [`run_training`] that also stops, after the current step, once `halt`
/// is raised. Episodes still running at that point are abandoned without
/// a gradient push.
pub fn run_training_until<E, F>(
    cfg: &TrainerConfig,
    rl: &RlConfig,
    store: &GlobalStore,
    make_env: F,
    policy: Policy,
    stats: Option<Sender<EpisodeStats>>,
    halt: &AtomicBool,
) -> Result<TrainingReport, TrainError>
where
    E: MultiAgentEnv + Send,
    F: Fn(usize) -> E,
{
    cfg.validate().map_err(TrainError::Config)?;
    rl.validate().map_err(TrainError::Config)?;

    let mut instances = Vec::with_capacity(cfg.n_env);
    for i in 0..cfg.n_env {
        let mut env = make_env(i);
        let initial = env.reset();
        if initial.len() > cfg.n_ag {
            return Err(TrainError::Config(format!(
                "instance {i} starts with {} agents but has {} workers",
                initial.len(),
                cfg.n_ag
            )));
        }
        let mut inbox: Vec<Inbox> = (0..cfg.n_ag).map(|_| Inbox::default()).collect();
        let mut owner = BTreeMap::new();
        for (w, (id, obs)) in initial.into_iter().enumerate() {
            owner.insert(id, w);
            inbox[w].assigned = Some((id, obs));
        }
        instances.push(Instance {
            shared: Mutex::new(Shared {
                env,
                phase: 0,
                arrived: 0,
                actions: BTreeMap::new(),
                owner,
                inbox,
                env_steps: 0,
                stop: false,
                poisoned: None,
            }),
            turn: Condvar::new(),
        });
    }

    let finished = AtomicU64::new(0);
    let pushes = AtomicU64::new(0);
    let episode_ids = AtomicU64::new(0);
    let ctx = Ctx {
        cfg,
        rl,
        store,
        policy: &policy,
        finished: &finished,
        pushes: &pushes,
        episode_ids: &episode_ids,
        halt,
        stats,
    };

    let results: Vec<Result<(), TrainError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            for w in 0..cfg.n_ag {
                let ctx = Ctx {
                    stats: ctx.stats.clone(),
                    ..ctx
                };
                handles.push(scope.spawn(move || {
                    let _guard = PanicGuard { instance: inst };
                    let r = worker(inst, i, w, &ctx);
                    if let Err(e) = &r {
                        inst.poison(e.to_string());
                    }
                    r
                }));
            }
        }
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(TrainError::Worker("a worker panicked".into())))
            })
            .collect()
    });
    drop(ctx);

    // report the root cause rather than a peer that merely saw the poison
    let errors: Vec<TrainError> = results.into_iter().filter_map(Result::err).collect();
    let halted = |e: &TrainError| matches!(e, TrainError::Worker(m) if m.starts_with("instance halted"));
    if let Some(i) = errors.iter().position(|e| !halted(e)).or((!errors.is_empty()).then_some(0)) {
        return Err(errors.into_iter().nth(i).expect("index in range"));
    }
    Ok(TrainingReport {
        episodes: finished.load(Ordering::SeqCst),
        pushes: pushes.load(Ordering::SeqCst),
        env_steps: instances.iter().map(|inst| inst.lock().env_steps).collect(),
    })
}

fn worker<E: MultiAgentEnv>(
    inst: &Instance<E>,
    instance: usize,
    w: usize,
    ctx: &Ctx<'_>,
) -> Result<(), TrainError> {
    let (mut net, _) = ctx.store.snapshot();
    let mut learner = AgentLearner::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(ctx.cfg.seed, instance, w));
    let mut no_flush = |_: &mut PolicyValueNet, _: &mut Gradients| Ok(());

    let mut current: Option<(AgentId, Observation)> = inst.lock().inbox[w].assigned.take();
    if current.is_some() {
        ctx.store.snapshot_into(&mut net)?;
    }
    loop {
        let action = match (&current, ctx.policy) {
            (Some((id, obs)), Policy::Learned) => {
                Some((*id, learner.act(&mut net, obs, &mut rng, ctx.rl, &mut no_flush)?))
            }
            (Some((id, obs)), Policy::Scripted(f)) => Some((*id, f(*id, obs))),
            (None, _) => None,
        };

        let (mine, stop) = {
            let mut sh = inst.lock();
            if let Some(why) = &sh.poisoned {
                return Err(TrainError::Worker(format!("instance halted: {why}")));
            }
            if let Some((id, a)) = action {
                sh.actions.insert(id, a);
            }
            sh.arrived += 1;
            if sh.arrived == ctx.cfg.n_ag {
                advance(&mut sh, ctx)?;
                inst.turn.notify_all();
            } else {
                let phase = sh.phase;
                while sh.phase == phase && sh.poisoned.is_none() {
                    sh = inst.turn.wait(sh).unwrap_or_else(|e| e.into_inner());
                }
                if let Some(why) = &sh.poisoned {
                    return Err(TrainError::Worker(format!("instance halted: {why}")));
                }
            }
            (std::mem::take(&mut sh.inbox[w]), sh.stop)
        };

        if let Some(t) = mine.transition {
            learner.observe(t.reward, t.speed);
            if t.status.is_terminal() {
                let summary = learner.finish(&mut net, t.status, ctx.rl, &mut no_flush)?;
                // the push happens while the other workers wait at the next turn
                ctx.store.apply(&learner.grads)?;
                ctx.pushes.fetch_add(1, Ordering::SeqCst);
                if let Some(tx) = &ctx.stats {
                    let _ = tx.send(EpisodeStats {
                        episode: ctx.episode_ids.fetch_add(1, Ordering::SeqCst),
                        instance,
                        agent: t.agent,
                        outcome: summary.status,
                        cum_reward: summary.cum_reward,
                        mean_speed: summary.mean_speed,
                        steps: summary.steps,
                    });
                }
                learner.reset_episode();
                current = None;
            } else {
                let id = current.as_ref().map(|c| c.0);
                debug_assert_eq!(id, Some(t.agent));
                current = Some((t.agent, t.observation.expect("observation of an active agent")));
            }
        }
        if let Some(assigned) = mine.assigned {
            ctx.store.snapshot_into(&mut net)?;
            learner.reset_episode();
            current = Some(assigned);
        }
        if stop {
            return Ok(());
        }
    }
}

/// Executed by the last worker to arrive, with the instance locked.
fn advance<E: MultiAgentEnv>(sh: &mut Shared<E>, ctx: &Ctx<'_>) -> Result<(), TrainError> {
    let actions = std::mem::take(&mut sh.actions);
    let step = sh
        .env
        .step(&actions)
        .map_err(|e| TrainError::Worker(format!("environment step failed: {e}")))?;
    sh.env_steps += 1;
    let mut terminals = 0;
    for t in step.transitions {
        let w = *sh
            .owner
            .get(&t.agent)
            .ok_or_else(|| TrainError::Worker(format!("transition for unowned agent {}", t.agent)))?;
        if t.status.is_terminal() {
            sh.owner.remove(&t.agent);
            terminals += 1;
        }
        sh.inbox[w].transition = Some(t);
    }
    for (id, obs) in step.spawned {
        let busy: Vec<usize> = sh.owner.values().copied().collect();
        let free = (0..ctx.cfg.n_ag)
            .find(|w| !busy.contains(w))
            .ok_or_else(|| TrainError::Worker("more agents than workers".into()))?;
        sh.owner.insert(id, free);
        sh.inbox[free].assigned = Some((id, obs));
    }
    let done = ctx.finished.fetch_add(terminals, Ordering::SeqCst) + terminals;
    let out_of_steps = ctx.cfg.max_env_steps.is_some_and(|m| sh.env_steps >= m);
    sh.stop = done >= ctx.cfg.total_episodes || out_of_steps || ctx.halt.load(Ordering::SeqCst);
    sh.arrived = 0;
    sh.phase += 1;
    Ok(())
}
