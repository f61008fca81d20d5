//! Double-DQN learning for one agent: target construction, MSE loss with
//! exact gradients, clipped optimizer steps, hard target copies and the
//! per-agent bundle of networks, optimizer, buffer and RNG streams.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{argmax, Gradients, Mlp};
use super::optim::{Optimizer, OptimizerKind};
use super::replay::{sample_batch, Experience, ReplayBuffer};
use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::rng::RngState;

fn stack(rows: impl ExactSizeIterator<Item = impl AsRef<[f64]>>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * dim);
    for r in rows {
        flat.extend_from_slice(r.as_ref());
    }
    Array2::from_shape_vec((n, dim), flat).expect("state rows share one dimension")
}

/// `r` for terminal transitions, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_main(s', a))`.
pub fn ddqn_targets(batch: &[&Experience], main: &Mlp, target: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    let dim = main.input_dim();
    let next = stack(batch.iter().map(|e| &e.s_next), dim);
    let q_main = main.forward(next.view())?;
    let q_target = target.forward(next.view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, e)| {
            if e.terminal {
                e.r
            } else {
                let row = q_main.row(b);
                let a = argmax(row.as_slice().expect("standard layout"));
                e.r + gamma * q_target[[b, a]]
            }
        })
        .collect())
}

/// Mean squared error between `targets` and `Q(s, a)` over the batch, and
/// its exact gradient.
pub fn q_loss_and_grads(net: &Mlp, states: &Array2<f64>, actions: &[usize], targets: &[f64]) -> Result<(f64, Gradients)> {
    let (q, cache) = net.forward_cached(states.view())?;
    let n = actions.len() as f64;
    let mut d_out = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = q[[b, a]] - y;
        loss += err * err;
        d_out[[b, a]] = 2.0 * err / n;
    }
    Ok((loss / n, net.backward(&cache, &d_out)))
}

/// One clipped gradient step of `main` towards the double-DQN targets.
/// Returns the pre-update loss; a non-finite loss leaves `main` untouched.
pub fn train_step(
    main: &mut Mlp,
    target: &Mlp,
    optimizer: &mut Optimizer,
    batch: &[&Experience],
    gamma: f64,
    clip_norm: f64,
) -> Result<f64> {
    let targets = ddqn_targets(batch, main, target, gamma)?;
    let states = stack(batch.iter().map(|e| &e.s), main.input_dim());
    let actions: Vec<usize> = batch.iter().map(|e| e.a as usize).collect();
    let (loss, mut grads) = q_loss_and_grads(main, &states, &actions, &targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            loss,
            context: String::new(),
        });
    }
    if clip_norm > 0.0 {
        grads.clip_global_norm(clip_norm);
    }
    optimizer.step(main, &grads);
    Ok(loss)
}

/// `target <- main`.
pub fn hard_update(target: &mut Mlp, main: &Mlp) -> Result<()> {
    target.copy_from(main)
}

/// Learning hyper-parameters shared by all agents of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnParams {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_update_every: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
}

/// One UAV's learner.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub main: Mlp,
    pub target: Mlp,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    pub explore_rng: ChaCha8Rng,
    pub replay_rng: ChaCha8Rng,
}

impl DqnAgent {
    /// Main net drawn from `init_rng`; the target starts as an exact copy.
    pub fn new(
        input_dim: usize,
        params: &DqnParams,
        init_rng: &mut ChaCha8Rng,
        explore_rng: ChaCha8Rng,
        replay_rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&params.hidden);
        dims.push(Action::COUNT);
        let main = Mlp::new(&dims, init_rng)?;
        Ok(DqnAgent {
            target: main.clone(),
            optimizer: Optimizer::new(params.optimizer, params.lr, &main),
            main,
            buffer: ReplayBuffer::new(params.replay_capacity),
            explore_rng,
            replay_rng,
        })
    }

    pub fn greedy(&self, state: &[f64]) -> Result<Action> {
        let q = self.main.forward_one(state)?;
        Ok(Action::ALL[argmax(&q)])
    }

    /// With probability `epsilon` a uniformly random action, else greedy.
    pub fn epsilon_greedy(&mut self, state: &[f64], epsilon: f64) -> Result<Action> {
        let beta: f64 = self.explore_rng.random();
        if beta < epsilon {
            Ok(Action::ALL[self.explore_rng.random_range(0..Action::COUNT)])
        } else {
            self.greedy(state)
        }
    }

    /// Samples a batch and takes one step; `None` while the buffer is too small.
    pub fn learn(&mut self, params: &DqnParams) -> Result<Option<f64>> {
        let Some(batch) = sample_batch(&self.buffer, params.batch_size, &mut self.replay_rng) else {
            return Ok(None);
        };
        let loss = train_step(
            &mut self.main,
            &self.target,
            &mut self.optimizer,
            &batch,
            params.gamma,
            params.clip_norm,
        )?;
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) -> Result<()> {
        hard_update(&mut self.target, &self.main)
    }

    pub fn to_record(&self) -> AgentRecord {
        AgentRecord {
            main: self.main.clone(),
            target: self.target.clone(),
            optimizer: self.optimizer.clone(),
            buffer: self.buffer.clone(),
            explore_rng: RngState::capture(&self.explore_rng),
            replay_rng: RngState::capture(&self.replay_rng),
        }
    }

    pub fn from_record(rec: AgentRecord) -> Result<Self> {
        Ok(DqnAgent {
            main: rec.main,
            target: rec.target,
            optimizer: rec.optimizer,
            buffer: rec.buffer,
            explore_rng: rec.explore_rng.restore()?,
            replay_rng: rec.replay_rng.restore()?,
        })
    }
}

/// Serialized agent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub main: Mlp,
    pub target: Mlp,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    pub explore_rng: RngState,
    pub replay_rng: RngState,
}
