//! n-step advantage actor-critic: returns, loss gradients, action selection
//! with repeat, and the per-agent learner shared by every training loop.

mod action;
mod learner;
mod optim;

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::nn::{log_softmax, softmax, ForwardCache, Gradients, NnError, PolicyValueNet};

pub use action::{sample_categorical, select_action, ActionRepeat, Decision};
pub use learner::{run_single_agent, AgentLearner, EpisodeSummary, FlushHook, SingleAgentReport};
pub use optim::RmsProp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    /// Decision steps between updates.
    pub n: usize,
    pub gamma: f64,
    /// Frames each sampled action is held for.
    pub action_repeat: usize,
    pub entropy_coef: f64,
    pub value_loss_coef: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            n: 20,
            gamma: 0.99,
            action_repeat: 4,
            entropy_coef: 0.01,
            value_loss_coef: 0.5,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.action_repeat == 0 {
            return Err("action_repeat must be at least 1".into());
        }
        if !(self.entropy_coef >= 0.0 && self.value_loss_coef >= 0.0) {
            return Err("loss coefficients must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RlError {
    #[error("update requested on an empty trajectory buffer")]
    EmptyBuffer,
    #[error("returns and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("environment rejected the step: {0}")]
    Env(String),
}

/// `R_i = r_i + γ R_{i+1}`, seeded with `bootstrap` after the last reward.
pub fn n_step_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut r = bootstrap;
    for (o, &reward) in out.iter_mut().zip(rewards).rev() {
        r = reward + gamma * r;
        *o = r;
    }
    out
}

pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>, RlError> {
    if returns.len() != values.len() {
        return Err(RlError::LengthMismatch(returns.len(), values.len()));
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// Gradients of the per-record loss
/// `-A·log π(a) + β·Σ π log π + c_v·(R - V)²`
/// with respect to the logits and the value output. The advantage is a
/// constant here, so no policy gradient reaches the value head through it.
///
/// Minimizing this loss ascends the policy objective and the entropy while
/// descending the squared value error.
pub fn loss_gradients(
    logits: &[f64],
    action: usize,
    advantage: f64,
    ret: f64,
    value: f64,
    cfg: &RlConfig,
) -> (Vec<f64>, f64) {
    let p = softmax(logits);
    let logp = log_softmax(logits);
    let entropy: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
    let dlogits = (0..logits.len())
        .map(|j| {
            let onehot = if j == action { 1.0 } else { 0.0 };
            -advantage * (onehot - p[j]) + cfg.entropy_coef * p[j] * (logp[j] + entropy)
        })
        .collect();
    (dlogits, 2.0 * cfg.value_loss_coef * (value - ret))
}

/// Scalar loss matching [`loss_gradients`], for diagnostics and gradient checks.
pub fn loss_value(logits: &[f64], action: usize, advantage: f64, ret: f64, value: f64, cfg: &RlConfig) -> f64 {
    let p = softmax(logits);
    let logp = log_softmax(logits);
    let neg_entropy: f64 = p.iter().zip(&logp).map(|(a, b)| a * b).sum();
    -advantage * logp[action] + cfg.entropy_coef * neg_entropy + cfg.value_loss_coef * (ret - value).powi(2)
}

/// One decision step awaiting its update.
#[derive(Clone, Debug)]
pub struct Record {
    pub observation: Observation,
    pub action: usize,
    /// Reward summed over every frame the action was held.
    pub reward: f64,
    pub value: f64,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Activations from the decision-time forward pass, reused when the
    /// parameters have not changed since.
    pub cache: Option<ForwardCache>,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryBuffer {
    pub records: Vec<Record>,
    pub bootstrap_value: f64,
    pub terminal: bool,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Marks the end of a segment: terminal segments bootstrap from zero.
    pub fn close(&mut self, terminal: bool, bootstrap: f64) {
        self.terminal = terminal;
        self.bootstrap_value = if terminal { 0.0 } else { bootstrap };
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.bootstrap_value = 0.0;
        self.terminal = false;
    }
}

/// Fills `buf` with the visual input `net` expects: the rendered frames, or
/// nothing for a net without a convolutional pipeline.
pub fn visual_input(net: &PolicyValueNet, obs: &Observation, buf: &mut Vec<f64>) {
    if net.config().visual.is_some() {
        obs.write_visual(buf);
    } else {
        buf.clear();
    }
}

/// Per-flush diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub records: usize,
    pub loss: f64,
    pub mean_advantage: f64,
    pub mean_entropy: f64,
}

/// Adds the gradient of the buffer's summed loss into `grads`.
pub fn accumulate_update(
    net: &PolicyValueNet,
    buffer: &TrajectoryBuffer,
    cfg: &RlConfig,
    grads: &mut Gradients,
) -> Result<UpdateStats, RlError> {
    if buffer.is_empty() {
        return Err(RlError::EmptyBuffer);
    }
    debug_assert!(!buffer.terminal || buffer.bootstrap_value == 0.0);
    let rewards: Vec<f64> = buffer.records.iter().map(|r| r.reward).collect();
    let returns = n_step_returns(&rewards, buffer.bootstrap_value, cfg.gamma);
    let mut stats = UpdateStats {
        records: buffer.len(),
        ..Default::default()
    };
    let mut visual = Vec::new();
    for (rec, &ret) in buffer.records.iter().zip(&returns) {
        let fresh;
        let (logits, value, cache) = match &rec.cache {
            Some(c) if net.is_current(c) => (rec.logits.clone(), rec.value, c),
            _ => {
                visual_input(net, &rec.observation, &mut visual);
                fresh = net.forward(&visual, &rec.observation.numeric)?;
                (fresh.logits.clone(), fresh.value, &fresh.cache)
            }
        };
        let adv = ret - value;
        let (dlogits, dvalue) = loss_gradients(&logits, rec.action, adv, ret, value, cfg);
        net.backward_into(cache, &dlogits, dvalue, grads)?;
        let p = softmax(&logits);
        stats.loss += loss_value(&logits, rec.action, adv, ret, value, cfg);
        stats.mean_advantage += adv;
        stats.mean_entropy -= p.iter().map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 }).sum::<f64>();
    }
    let n = buffer.len() as f64;
    stats.mean_advantage /= n;
    stats.mean_entropy /= n;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        assert_eq!(n_step_returns(&[1.0], 0.0, 0.99), vec![1.0]);
        let r = n_step_returns(&[0.0, 0.0, 1.0], 0.0, 0.99);
        assert!((r[0] - 0.9801).abs() < 1e-15);
        assert_eq!(r[1], 0.99);
        assert_eq!(r[2], 1.0);
        assert_eq!(n_step_returns(&[0.5], 2.0, 0.9), vec![0.5 + 0.9 * 2.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[1.0], &[0.4]).unwrap()[0], 1.0 - 0.4);
        assert_eq!(advantages(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(advantages(&[1.0], &[]).is_err());
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform() {
        let cfg = RlConfig::default();
        let (d, _) = loss_gradients(&[0.2, 0.2, 0.2], 0, 0.0, 0.0, 0.0, &cfg);
        assert!(d.iter().all(|x| x.abs() < 1e-16));
    }

    #[test]
    fn config_validation() {
        assert!(RlConfig::default().validate().is_ok());
        assert!(RlConfig { n: 0, ..Default::default() }.validate().is_err());
        assert!(RlConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    }
}
