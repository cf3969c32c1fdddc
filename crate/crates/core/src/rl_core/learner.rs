use std::collections::BTreeMap;

use rand::Rng;

use super::action::{select_action, ActionRepeat};
use super::optim::RmsProp;
use super::{accumulate_update, visual_input, Record, RlConfig, RlError, TrajectoryBuffer};
use crate::env::{AgentId, AgentStatus, MultiAgentEnv, Observation};
use crate::nn::{log_softmax, Gradients, PolicyValueNet};

/// Outcome of one finished agent episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub status: AgentStatus,
    pub cum_reward: f64,
    pub mean_speed: f64,
    pub steps: u64,
    pub decisions: u64,
}

/// Per-agent state of the actor-critic loop: the trajectory segment being
/// collected, the held action and the gradients accumulated so far.
#[derive(Debug)]
pub struct AgentLearner {
    pub buffer: TrajectoryBuffer,
    pub repeat: ActionRepeat,
    pub grads: Gradients,
    visual: Vec<f64>,
    cum_reward: f64,
    speed_sum: f64,
    steps: u64,
    decisions: u64,
}

/// Called after every segment's gradients were added to the accumulator.
pub type FlushHook<'a> = dyn FnMut(&mut PolicyValueNet, &mut Gradients) -> Result<(), RlError> + 'a;

impl AgentLearner {
    pub fn new(net: &PolicyValueNet) -> Self {
        Self {
            buffer: TrajectoryBuffer::default(),
            repeat: ActionRepeat::default(),
            grads: Gradients::zeros_like(net),
            visual: Vec::new(),
            cum_reward: 0.0,
            speed_sum: 0.0,
            steps: 0,
            decisions: 0,
        }
    }

    /// Forgets everything from the previous episode, gradients included.
    pub fn reset_episode(&mut self) {
        self.buffer.clear();
        self.repeat = ActionRepeat::default();
        self.grads.clear();
        self.cum_reward = 0.0;
        self.speed_sum = 0.0;
        self.steps = 0;
        self.decisions = 0;
    }

    /// Chooses the action for the current frame. On decision frames a full
    /// buffer is first flushed, bootstrapping from the value of `obs`.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        net: &mut PolicyValueNet,
        obs: &Observation,
        rng: &mut R,
        cfg: &RlConfig,
        on_flush: &mut FlushHook<'_>,
    ) -> Result<usize, RlError> {
        if !self.repeat.decision_due(cfg.action_repeat) {
            return Ok(select_action(&[], rng, &mut self.repeat, cfg.action_repeat).action);
        }
        visual_input(net, obs, &mut self.visual);
        let mut fwd = net.forward(&self.visual, &obs.numeric)?;
        if self.buffer.len() >= cfg.n {
            self.buffer.close(false, fwd.value);
            accumulate_update(net, &self.buffer, cfg, &mut self.grads)?;
            self.buffer.clear();
            on_flush(net, &mut self.grads)?;
            if !net.is_current(&fwd.cache) {
                fwd = net.forward(&self.visual, &obs.numeric)?;
            }
        }
        let d = select_action(&fwd.logits, rng, &mut self.repeat, cfg.action_repeat);
        self.decisions += 1;
        self.buffer.records.push(Record {
            observation: obs.clone(),
            action: d.action,
            reward: 0.0,
            value: fwd.value,
            log_probs: log_softmax(&fwd.logits),
            logits: fwd.logits,
            cache: Some(fwd.cache),
        });
        Ok(d.action)
    }

    /// Credits the reward of the frame just simulated to the current decision.
    pub fn observe(&mut self, reward: f64, speed: f64) {
        if let Some(last) = self.buffer.records.last_mut() {
            last.reward += reward;
        }
        self.cum_reward += reward;
        self.speed_sum += speed;
        self.steps += 1;
    }

    /// Flushes the remaining segment with a zero bootstrap.
    pub fn finish(
        &mut self,
        net: &mut PolicyValueNet,
        status: AgentStatus,
        cfg: &RlConfig,
        on_flush: &mut FlushHook<'_>,
    ) -> Result<EpisodeSummary, RlError> {
        if !self.buffer.is_empty() {
            self.buffer.close(true, 0.0);
            accumulate_update(net, &self.buffer, cfg, &mut self.grads)?;
            self.buffer.clear();
            on_flush(net, &mut self.grads)?;
        }
        Ok(EpisodeSummary {
            status,
            cum_reward: self.cum_reward,
            mean_speed: if self.steps > 0 {
                self.speed_sum / self.steps as f64
            } else {
                0.0
            },
            steps: self.steps,
            decisions: self.decisions,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SingleAgentReport {
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
}

/// The single-worker actor-critic loop: gradients are applied to the
/// parameters after every segment of at most `n` decisions or at a terminal
/// state. The environment must host at most one agent at a time.
///
/// `on_step` runs after every environment step with the step count.
#[allow(clippy::too_many_arguments)]
pub fn run_single_agent<E, R>(
    env: &mut E,
    net: &mut PolicyValueNet,
    opt: &mut RmsProp,
    cfg: &RlConfig,
    max_env_steps: u64,
    rng: &mut R,
    mut on_episode: impl FnMut(&EpisodeSummary),
    mut on_step: impl FnMut(u64, &PolicyValueNet),
) -> Result<SingleAgentReport, RlError>
where
    E: MultiAgentEnv,
    R: Rng + ?Sized,
{
    let mut report = SingleAgentReport::default();
    let mut learner = AgentLearner::new(net);
    let mut updates = 0u64;
    let mut apply = |net: &mut PolicyValueNet, g: &mut Gradients| {
        opt.apply(net.params_mut(), g.as_slice());
        g.clear();
        updates += 1;
        Ok(())
    };
    let mut current: Option<(AgentId, Observation)> = env.reset().into_iter().next();
    while report.env_steps < max_env_steps {
        let mut actions = BTreeMap::new();
        if let Some((id, obs)) = &current {
            let a = learner.act(net, obs, rng, cfg, &mut apply)?;
            actions.insert(*id, a);
        }
        let step = env.step(&actions).map_err(|e| RlError::Env(e.to_string()))?;
        report.env_steps += 1;
        if let Some((id, _)) = current.take() {
            let t = step
                .transitions
                .iter()
                .find(|t| t.agent == id)
                .expect("transition for the acting agent");
            learner.observe(t.reward, t.speed);
            if t.status.is_terminal() {
                let summary = learner.finish(net, t.status, cfg, &mut apply)?;
                report.episodes += 1;
                on_episode(&summary);
                learner.reset_episode();
            } else {
                current = Some((id, t.observation.clone().expect("observation of an active agent")));
            }
        }
        if current.is_none() {
            current = step.spawned.into_iter().next();
        }
        on_step(report.env_steps, net);
    }
    report.updates = updates;
    Ok(report)
}
