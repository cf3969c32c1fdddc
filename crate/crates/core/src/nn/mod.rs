//! Dense and convolutional layers with hand-written gradients, assembled into
//! the policy/value network.

pub mod checkpoint;
pub mod layers;
mod net;
mod tensor;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint};
pub use layers::{log_softmax, softmax};
pub use net::{
    Architecture, ConvSpec, Forward, ForwardCache, Gradients, NetConfig, ParamSpec,
    PolicyValueNet, VisualConfig,
};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{what} has length {got}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache was produced before the parameters last changed")]
    StaleCache,
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for NnError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
