//! Interface shared by every multi-agent environment the trainer can drive.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scenario::{ViewLayers, CELLS};

pub type AgentId = u64;

/// Lifecycle of one agent episode; transitions only leave `Active`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    ReachedGoal,
    Crashed,
    TimedOut,
}

impl AgentStatus {
    pub fn is_terminal(self) -> bool {
        self != AgentStatus::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::Active => "active",
            AgentStatus::ReachedGoal => "goal",
            AgentStatus::Crashed => "crash",
            AgentStatus::TimedOut => "timeout",
        }
    }
}

/// What an agent perceives: a stack of rendered views (oldest first) and a
/// numeric vector. Environments without a visual channel leave `frames` empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frames: Vec<Arc<ViewLayers>>,
    pub numeric: Vec<f64>,
}

impl Observation {
    pub fn numeric_only(numeric: Vec<f64>) -> Self {
        Self {
            frames: Vec::new(),
            numeric,
        }
    }

    /// Number of visual channels (frames × semantic layers).
    pub fn channels(&self) -> usize {
        self.frames.len() * 3
    }

    /// Writes the frames channel-major (frame, layer, row, col) as 0.0/1.0.
    pub fn write_visual(&self, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.channels() * CELLS);
        for frame in &self.frames {
            for layer in frame.layers() {
                out.extend(layer.as_slice().iter().map(|&c| c as f64));
            }
        }
    }
}

/// Per-agent result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub agent: AgentId,
    pub reward: f64,
    pub status: AgentStatus,
    pub speed: f64,
    /// Next observation; `None` once the agent is terminal.
    pub observation: Option<Observation>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvStep {
    /// One entry per agent that was active when the step started.
    pub transitions: Vec<Transition>,
    /// Agents that appeared during the step.
    pub spawned: Vec<(AgentId, Observation)>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("no action supplied for active agent {0}")]
    MissingAction(AgentId),
    #[error("action supplied for unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("action index {0} out of range")]
    InvalidAction(usize),
}

/// A world hosting several agents that act simultaneously.
///
/// `step` is a barrier: it requires one action per active agent and advances
/// all of them at once. Agents may terminate and new ones may spawn on any step.
pub trait MultiAgentEnv {
    fn num_actions(&self) -> usize;

    /// Restarts the world and returns the initial agents.
    fn reset(&mut self) -> Vec<(AgentId, Observation)>;

    fn step(&mut self, actions: &BTreeMap<AgentId, usize>) -> Result<EnvStep, EnvError>;

    fn active_agents(&self) -> Vec<AgentId>;
}
