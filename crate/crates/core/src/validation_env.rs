//! A deterministic chain MDP with an exact value-iteration oracle, used to
//! check the actor-critic stack end to end.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, AgentStatus, EnvError, EnvStep, MultiAgentEnv, Observation, Transition};
use crate::nn::{NetConfig, PolicyValueNet};
use crate::rl_core::{run_single_agent, RlConfig, RlError, RmsProp};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const STAY: usize = 2;

/// States `0..n_states`; the last one is the terminal goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub n_states: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub horizon: u64,
    /// Length of the one-hot observation; at least `n_states`.
    pub numeric_width: usize,
    /// Agents acting side by side in independent chains.
    pub agents: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_states: 8,
            step_reward: -0.01,
            goal_reward: 1.0,
            gamma: 0.99,
            horizon: 50,
            numeric_width: 8,
            agents: 1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn goal(&self) -> usize {
        self.n_states - 1
    }

    /// Deterministic successor of `s` under `action`.
    pub fn next_state(&self, s: usize, action: usize) -> usize {
        match action {
            LEFT => s.saturating_sub(1),
            RIGHT => (s + 1).min(self.goal()),
            _ => s,
        }
    }

    /// Reward of one transition; reaching the goal also pays the step cost.
    pub fn reward(&self, next: usize) -> f64 {
        if next == self.goal() {
            self.step_reward + self.goal_reward
        } else {
            self.step_reward
        }
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.numeric_width];
        v[s] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug)]
struct ChainAgent {
    state: usize,
    steps: u64,
}

/// Independent copies of the chain, one per agent, behind the same
/// multi-agent interface as the traffic simulator. A finished agent is
/// replaced at once by a new one starting in a random non-terminal state.
#[derive(Clone, Debug)]
pub struct ChainMdp {
    cfg: ChainConfig,
    rng: ChaCha8Rng,
    agents: BTreeMap<AgentId, ChainAgent>,
    next_id: AgentId,
}

impl ChainMdp {
    pub fn new(cfg: ChainConfig) -> Result<Self, String> {
        if cfg.n_states < 2 {
            return Err("the chain needs at least two states".into());
        }
        if cfg.numeric_width < cfg.n_states {
            return Err("numeric_width must cover every state".into());
        }
        if cfg.horizon == 0 {
            return Err("horizon must be positive".into());
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            agents: BTreeMap::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn state_of(&self, id: AgentId) -> Option<usize> {
        self.agents.get(&id).map(|a| a.state)
    }

    fn spawn(&mut self) -> (AgentId, Observation) {
        let state = self.rng.gen_range(0..self.cfg.goal());
        let id = self.next_id;
        self.next_id += 1;
        self.agents.insert(id, ChainAgent { state, steps: 0 });
        (id, Observation::numeric_only(self.cfg.one_hot(state)))
    }
}

impl MultiAgentEnv for ChainMdp {
    fn num_actions(&self) -> usize {
        3
    }

    fn reset(&mut self) -> Vec<(AgentId, Observation)> {
        self.rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        self.agents.clear();
        self.next_id = 1;
        (0..self.cfg.agents).map(|_| self.spawn()).collect()
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, usize>) -> Result<EnvStep, EnvError> {
        for id in self.agents.keys() {
            if !actions.contains_key(id) {
                return Err(EnvError::MissingAction(*id));
            }
        }
        for (&id, &a) in actions {
            if !self.agents.contains_key(&id) {
                return Err(EnvError::UnknownAgent(id));
            }
            if a >= 3 {
                return Err(EnvError::InvalidAction(a));
            }
        }
        let mut out = EnvStep::default();
        let mut finished = 0;
        for (&id, &a) in actions {
            let agent = self.agents.get_mut(&id).expect("checked above");
            let next = self.cfg.next_state(agent.state, a);
            agent.state = next;
            agent.steps += 1;
            let status = if next == self.cfg.goal() {
                AgentStatus::ReachedGoal
            } else if agent.steps >= self.cfg.horizon {
                AgentStatus::TimedOut
            } else {
                AgentStatus::Active
            };
            out.transitions.push(Transition {
                agent: id,
                reward: self.cfg.reward(next),
                status,
                speed: 0.0,
                observation: (!status.is_terminal())
                    .then(|| Observation::numeric_only(self.cfg.one_hot(next))),
            });
            if status.is_terminal() {
                self.agents.remove(&id);
                finished += 1;
            }
        }
        for _ in 0..finished {
            out.spawned.push(self.spawn());
        }
        Ok(out)
    }

    fn active_agents(&self) -> Vec<AgentId> {
        self.agents.keys().copied().collect()
    }
}

/// Optimal values (zero at the goal) and greedy actions, iterated until
/// successive value vectors differ by less than `tol` in max-norm.
pub fn value_iteration(cfg: &ChainConfig, tol: f64) -> (Vec<f64>, Vec<usize>) {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = cfg.n_states;
    let q = |v: &[f64], s: usize, a: usize| {
        let next = cfg.next_state(s, a);
        let cont = if next == cfg.goal() { 0.0 } else { v[next] };
        cfg.reward(next) + cfg.gamma * cont
    };
    let mut v = vec![0.0; n];
    loop {
        let mut delta: f64 = 0.0;
        let mut fresh = v.clone();
        for (s, f) in fresh.iter_mut().enumerate().take(cfg.goal()) {
            *f = (0..3).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((*f - v[s]).abs());
        }
        v = fresh;
        if delta < tol {
            break;
        }
    }
    let policy = (0..n)
        .map(|s| {
            (0..3)
                .max_by(|&a, &b| q(&v, s, a).total_cmp(&q(&v, s, b)))
                .expect("three actions")
        })
        .collect();
    (v, policy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub chain: ChainConfig,
    pub rl: RlConfig,
    pub hidden: usize,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub max_env_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            rl: RlConfig {
                action_repeat: 1,
                ..RlConfig::default()
            },
            hidden: 32,
            lr: 7e-4,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-5,
            max_env_steps: 50_000,
            eval_every: 1_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub step: u64,
    /// Share of non-terminal states where the greedy action is optimal.
    pub agreement: f64,
    /// Largest `|V_net - V*|` over non-terminal states.
    pub value_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub episodes: u64,
    pub updates: u64,
}

impl ValidationReport {
    pub fn last(&self) -> &ValidationRow {
        self.rows.last().expect("at least the initial row")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Greedy agreement and worst value error of `net` against the oracle.
pub fn evaluate_against_oracle(net: &PolicyValueNet, cfg: &ChainConfig) -> Result<(f64, f64), RlError> {
    let (v_star, pi_star) = value_iteration(cfg, 1e-12);
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    for s in 0..cfg.goal() {
        let out = net.forward(&[], &cfg.one_hot(s))?;
        let greedy = (0..out.logits.len())
            .max_by(|&a, &b| out.logits[a].total_cmp(&out.logits[b]))
            .expect("non-empty logits");
        if greedy == pi_star[s] {
            agree += 1;
        }
        worst = worst.max((out.value - v_star[s]).abs());
    }
    Ok((agree as f64 / cfg.goal() as f64, worst))
}

/// Trains a small dense net on the chain with the single-worker loop and
/// records oracle agreement every `eval_every` steps.
pub fn run_validation(cfg: &ValidationConfig) -> Result<ValidationReport, RlError> {
    cfg.rl.validate().map_err(RlError::Env)?;
    let chain = ChainConfig {
        agents: 1,
        seed: cfg.seed,
        ..cfg.chain.clone()
    };
    let mut env = ChainMdp::new(chain.clone()).map_err(RlError::Env)?;
    let net_cfg = NetConfig::numeric_only(chain.numeric_width, cfg.hidden, cfg.hidden, 3);
    let mut net = PolicyValueNet::init(net_cfg, cfg.seed)?;
    let mut opt = RmsProp::new(net.param_count(), cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let (agreement, value_error) = evaluate_against_oracle(&net, &chain)?;
    let mut rows = vec![ValidationRow {
        step: 0,
        agreement,
        value_error,
    }];
    let mut eval_error = None;
    let every = cfg.eval_every.max(1);
    let report = run_single_agent(
        &mut env,
        &mut net,
        &mut opt,
        &cfg.rl,
        cfg.max_env_steps,
        &mut rng,
        |_| {},
        |step, net| {
            if step % every == 0 || step == cfg.max_env_steps {
                match evaluate_against_oracle(net, &chain) {
                    Ok((agreement, value_error)) => rows.push(ValidationRow {
                        step,
                        agreement,
                        value_error,
                    }),
                    Err(e) => eval_error = Some(e),
                }
            }
        },
    )?;
    if let Some(e) = eval_error {
        return Err(e);
    }
    Ok(ValidationReport {
        rows,
        episodes: report.episodes,
        updates: report.updates,
    })
}
