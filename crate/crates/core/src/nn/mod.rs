//! Dense ELU networks with hand-written backpropagation, Adam, and the two
//! distilled policy architectures.

mod mlp;
mod nets;
mod train;

pub use mlp::{elu, elu_grad, Adam, Mlp, MlpCache};
pub use nets::{feedback_compose, FeedbackNet, NetKind, NetPolicy, Normalizer, TorqueNet, HIDDEN};
pub use train::{
    distill_loss, loss_and_gradient, param_count, train, train_step, DistillationDataset, DistillationRecord, TrainConfig,
    TrainedNet,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("expected input of length {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("empty dataset or batch")]
    Empty,
    #[error("training diverged at batch {batch} (loss {loss})")]
    Diverged { batch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
}
