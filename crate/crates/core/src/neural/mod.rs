//! Per-agent Q-network machinery built directly on dense arrays.

mod dqn;
mod mlp;
mod optim;
mod replay;

pub use dqn::{ddqn_targets, hard_update, q_loss_and_grads, train_step, AgentRecord, DqnAgent, DqnParams};
pub use mlp::{argmax, Dense, ForwardCache, Gradients, LayerNorm, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use replay::{sample_batch, sample_indices, Experience, ReplayBuffer};
