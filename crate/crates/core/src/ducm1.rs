//! Multi-agent double-DQN training for a fixed UAV fleet under the four
//! information-exchange levels, greedy rollouts, and a tabular Q-learning
//! baseline.
//!
//! Every step all agents pick an action from the state observed at step
//! start, the moves are applied together, association runs once on the new
//! joint positions and each agent is rewarded according to its level.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, GridPos};
use crate::harness::checkpoint::{BestPolicies, Checkpoint, TrainerKind, FORMAT_VERSION};
use crate::harness::config::{Algorithm, RewardConfig, RunConfig};
use crate::harness::metrics::{EpisodeKind, MetricsRow};
use crate::neural::{argmax, DqnAgent, DqnParams, Experience, Mlp};
use crate::rewards::reward_for_level;
use crate::rng::stream;
use crate::scenario::Scenario;

/// What an agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpec {
    pub level: u8,
    pub m: usize,
    pub steps: usize,
    pub include_time: bool,
}

impl StateSpec {
    pub fn dim(&self, n_uavs: usize) -> usize {
        let pos = if self.level == 4 { 2 * n_uavs } else { 2 };
        pos + usize::from(self.include_time)
    }
}

/// Levels 1-3: the agent's own normalized `(x, y [, t])`. Level 4: every
/// UAV's `(x, y)` in ascending id order, then `[t]`.
pub fn build_state(spec: &StateSpec, agent: usize, uavs: &[GridPos], t: usize) -> Vec<f64> {
    let scale = (spec.m - 1) as f64;
    let mut s = Vec::with_capacity(spec.dim(uavs.len()));
    let mut push = |p: &GridPos| {
        s.push(p.x as f64 / scale);
        s.push(p.y as f64 / scale);
    };
    if spec.level == 4 {
        uavs.iter().for_each(&mut push);
    } else {
        push(&uavs[agent]);
    }
    if spec.include_time {
        s.push(t as f64 / spec.steps as f64);
    }
    s
}

/// A run configuration resolved for the fixed-fleet trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Ducm1Config {
    pub level: u8,
    pub n_uavs: usize,
    pub n_episodes: usize,
    pub steps_per_episode: usize,
    pub initial_positions: Vec<GridPos>,
    pub include_time_state: bool,
    pub dqn: DqnParams,
    pub reward: RewardConfig,
    pub eval_every: usize,
    pub tabular_lr: f64,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Ducm1Config {
    pub fn resolve(run: &RunConfig, scenario: &Scenario) -> Result<Self> {
        run.validate()?;
        Ok(Ducm1Config {
            level: run.ducm1.level,
            n_uavs: run.fleet.n_uavs,
            n_episodes: run.learning.n_episodes,
            steps_per_episode: run.ducm1.steps_per_episode,
            initial_positions: run.initial_positions(),
            include_time_state: run
                .ducm1
                .include_time_state
                .unwrap_or_else(|| scenario.users.is_dynamic()),
            dqn: run.dqn_params(Algorithm::Ducm1),
            reward: run.reward.clone(),
            eval_every: run.learning.eval_every,
            tabular_lr: run.ducm1.tabular_lr,
            seed: run.seed,
            record_wall_time: run.record_wall_time,
        })
    }

    pub fn state_spec(&self, m: usize) -> StateSpec {
        StateSpec {
            level: self.level,
            m,
            steps: self.steps_per_episode,
            include_time: self.include_time_state,
        }
    }
}

/// Positions and connected counts of a rollout; index 0 is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub positions: Vec<Vec<GridPos>>,
    pub connected: Vec<usize>,
}

impl Rollout {
    pub fn final_connected(&self) -> usize {
        *self.connected.last().expect("rollout has a start entry")
    }
}

fn rollout_with(
    scenario: &Scenario,
    initial: &[GridPos],
    steps: usize,
    mut act: impl FnMut(usize, &[GridPos], usize) -> Result<Action>,
) -> Result<Rollout> {
    let alive = vec![true; initial.len()];
    let mut pos = initial.to_vec();
    let mut out = Rollout {
        positions: vec![pos.clone()],
        connected: vec![scenario.connected(&pos, &alive, 0)],
    };
    for t in 0..steps {
        let actions = (0..pos.len())
            .map(|i| act(i, &pos, t))
            .collect::<Result<Vec<_>>>()?;
        pos = scenario.apply_moves(&pos, &alive, &actions).positions;
        out.connected.push(scenario.connected(&pos, &alive, t + 1));
        out.positions.push(pos.clone());
    }
    Ok(out)
}

/// Greedy (`epsilon = 0`) rollout of fixed policies.
pub fn greedy_rollout(
    policies: &[Mlp],
    scenario: &Scenario,
    spec: &StateSpec,
    initial: &[GridPos],
    steps: usize,
) -> Result<Rollout> {
    if policies.len() != initial.len() {
        return Err(Error::DimensionMismatch {
            expected: initial.len(),
            got: policies.len(),
        });
    }
    rollout_with(scenario, initial, steps, |i, pos, t| {
        let q = policies[i].forward_one(&build_state(spec, i, pos, t))?;
        Ok(Action::ALL[argmax(&q)])
    })
}

/// Per-episode report of either trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub row: MetricsRow,
    pub agent_mean_rewards: Vec<f64>,
    /// Final-step connectivity of the greedy evaluation, when one ran.
    pub greedy_final: Option<usize>,
}

pub(crate) fn with_context(e: Error, context: impl FnOnce() -> String) -> Error {
    match e {
        Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss {
            loss,
            context: context(),
        },
        other => other,
    }
}

pub(crate) struct StepTotals {
    pub connected: usize,
    pub reward_sum: Vec<f64>,
    pub reward_count: Vec<usize>,
    pub loss_sum: f64,
    pub loss_count: usize,
}

impl StepTotals {
    pub fn new(n: usize) -> Self {
        StepTotals {
            connected: 0,
            reward_sum: vec![0.0; n],
            reward_count: vec![0; n],
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    pub fn into_report(self, episode: usize, kind: EpisodeKind, wall_ms: u64) -> EpisodeReport {
        let agent_mean_rewards: Vec<f64> = self
            .reward_sum
            .iter()
            .zip(&self.reward_count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let total: usize = self.reward_count.iter().sum();
        EpisodeReport {
            row: MetricsRow {
                episode,
                kind,
                accumulated_connected: self.connected,
                mean_reward: if total == 0 {
                    0.0
                } else {
                    self.reward_sum.iter().sum::<f64>() / total as f64
                },
                mean_loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
                wall_ms,
            },
            agent_mean_rewards,
            greedy_final: None,
        }
    }
}

pub(crate) fn elapsed_ms(start: Instant, record: bool) -> u64 {
    if record {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

pub(crate) fn new_agents(seed: u64, n: usize, input_dim: usize, params: &DqnParams) -> Result<Vec<DqnAgent>> {
    (0..n)
        .map(|i| {
            let i = i as u64;
            DqnAgent::new(
                input_dim,
                params,
                &mut stream(seed, "init", i),
                stream(seed, "explore", i),
                stream(seed, "replay", i),
            )
        })
        .collect()
}

/// Fixed-fleet multi-agent trainer.
pub struct Ducm1Trainer {
    run: RunConfig,
    cfg: Ducm1Config,
    scenario: Scenario,
    spec: StateSpec,
    agents: Vec<DqnAgent>,
    episode: usize,
    best: Option<BestPolicies>,
}

impl Ducm1Trainer {
    pub fn new(run: RunConfig) -> Result<Self> {
        let scenario = run.scenario(Algorithm::Ducm1)?;
        let cfg = Ducm1Config::resolve(&run, &scenario)?;
        let spec = cfg.state_spec(scenario.grid.m);
        let agents = new_agents(cfg.seed, cfg.n_uavs, spec.dim(cfg.n_uavs), &cfg.dqn)?;
        Ok(Ducm1Trainer {
            run,
            cfg,
            scenario,
            spec,
            agents,
            episode: 0,
            best: None,
        })
    }

    /// Restores a trainer; the checkpoint must come from the same config.
    pub fn from_checkpoint(run: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        ckpt.verify_config(&run)?;
        if ckpt.trainer != TrainerKind::Ducm1 {
            return Err(Error::CorruptCheckpoint("checkpoint belongs to another trainer".into()));
        }
        let mut t = Self::new(run)?;
        if ckpt.agents.len() != t.agents.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} agents stored, {} expected",
                ckpt.agents.len(),
                t.agents.len()
            )));
        }
        t.agents = ckpt
            .agents
            .into_iter()
            .map(DqnAgent::from_record)
            .collect::<Result<_>>()?;
        t.episode = ckpt.episode;
        t.best = ckpt.best;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash: self.run.hash(),
            config: self.run.clone(),
            trainer: TrainerKind::Ducm1,
            episode: self.episode,
            agents: self.agents.iter().map(DqnAgent::to_record).collect(),
            best: self.best.clone(),
            plan_rng: None,
        }
    }

    pub fn config(&self) -> &Ducm1Config {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn spec(&self) -> &StateSpec {
        &self.spec
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn policies(&self) -> Vec<Mlp> {
        self.agents.iter().map(|a| a.main.clone()).collect()
    }

    pub fn best(&self) -> Option<&BestPolicies> {
        self.best.as_ref()
    }

    pub fn greedy_rollout(&self, policies: &[Mlp], initial: &[GridPos]) -> Result<Rollout> {
        greedy_rollout(policies, &self.scenario, &self.spec, initial, self.cfg.steps_per_episode)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let start = Instant::now();
        let episode = self.episode + 1;
        let n = self.cfg.n_uavs;
        let steps = self.cfg.steps_per_episode;
        let eps = self.cfg.dqn.epsilon;
        let alive = vec![true; n];
        let mut pos = self.cfg.initial_positions.clone();
        let mut totals = StepTotals::new(n);

        for t in 0..steps {
            let states: Vec<Vec<f64>> = (0..n).map(|i| build_state(&self.spec, i, &pos, t)).collect();
            let actions = self
                .agents
                .iter_mut()
                .zip(&states)
                .map(|(agent, s)| agent.epsilon_greedy(s, eps))
                .collect::<Result<Vec<_>>>()?;
            let moved = self.scenario.apply_moves(&pos, &alive, &actions);
            let assoc = self.scenario.associate(&moved.positions, &alive, t + 1);
            totals.connected += assoc.connected_total;
            let ctx = self.scenario.reward_context(
                &assoc,
                &moved.positions,
                &alive,
                &moved.out_of_bound,
                t + 1,
                &self.cfg.reward,
            );
            let terminal = self.spec.include_time && t + 1 == steps;
            for (i, (agent, s)) in self.agents.iter_mut().zip(states).enumerate() {
                let r = reward_for_level(self.cfg.level, i, &ctx);
                totals.reward_sum[i] += r;
                totals.reward_count[i] += 1;
                agent.buffer.push(Experience {
                    s,
                    a: actions[i].code(),
                    s_next: build_state(&self.spec, i, &moved.positions, t + 1),
                    r,
                    terminal,
                });
                if let Some(loss) = agent
                    .learn(&self.cfg.dqn)
                    .map_err(|e| with_context(e, || format!(" (agent {i}, episode {episode}, step {t})")))?
                {
                    totals.loss_sum += loss;
                    totals.loss_count += 1;
                }
            }
            if (t + 1) % self.cfg.dqn.target_update_every == 0 {
                for agent in &mut self.agents {
                    agent.sync_target()?;
                }
            }
            pos = moved.positions;
        }

        self.episode = episode;
        let mut report = totals.into_report(episode, EpisodeKind::Single, 0);
        if self.cfg.eval_every > 0 && (episode.is_multiple_of(self.cfg.eval_every) || episode == self.cfg.n_episodes) {
            let policies = self.policies();
            let got = self.greedy_rollout(&policies, &self.cfg.initial_positions)?.final_connected();
            if self.best.as_ref().is_none_or(|b| got > b.connected) {
                self.best = Some(BestPolicies {
                    episode,
                    connected: got,
                    policies,
                });
            }
            report.greedy_final = Some(got);
        }
        report.row.wall_ms = elapsed_ms(start, self.cfg.record_wall_time);
        Ok(report)
    }

    /// Runs the remaining episodes, handing each report to `on_episode`.
    pub fn train(&mut self, mut on_episode: impl FnMut(&Self, &EpisodeReport) -> Result<()>) -> Result<()> {
        while self.episode < self.cfg.n_episodes {
            let report = self.run_episode()?;
            on_episode(self, &report)?;
        }
        Ok(())
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policies: Vec<Mlp>,
    pub best: Option<BestPolicies>,
    pub reports: Vec<EpisodeReport>,
}

impl TrainOutcome {
    pub fn metrics(&self) -> Vec<MetricsRow> {
        self.reports.iter().map(|r| r.row.clone()).collect()
    }
}

pub fn train(run: &RunConfig) -> Result<TrainOutcome> {
    let mut trainer = Ducm1Trainer::new(run.clone())?;
    let mut reports = Vec::with_capacity(trainer.cfg.n_episodes);
    trainer.train(|_, r| {
        reports.push(r.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        policies: trainer.policies(),
        best: trainer.best,
        reports,
    })
}

/// Tabular action values over `M^2 (T + 1)` position-time states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: Vec<[f64; Action::COUNT]>,
}

impl QTable {
    pub fn new(n_states: usize) -> Self {
        QTable {
            values: vec![[0.0; Action::COUNT]; n_states],
        }
    }

    pub fn greedy(&self, s: usize) -> Action {
        Action::ALL[argmax(&self.values[s])]
    }

    /// `Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a))`; `s_next = None`
    /// for terminal transitions.
    pub fn update(&mut self, s: usize, a: Action, r: f64, s_next: Option<usize>, alpha: f64, gamma: f64) {
        let future = s_next.map_or(0.0, |n| self.values[n].iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let q = &mut self.values[s][a.index()];
        *q += alpha * (r + gamma * future - *q);
    }
}

pub fn tabular_state(m: usize, steps: usize, pos: GridPos, t: usize) -> usize {
    (pos.x * m + pos.y) * (steps + 1) + t
}

#[derive(Debug, Clone)]
pub struct TabularOutcome {
    pub tables: Vec<QTable>,
    pub reports: Vec<EpisodeReport>,
    /// Best final-step connectivity over the periodic greedy evaluations.
    pub best_connected: Option<usize>,
}

pub fn tabular_rollout(tables: &[QTable], scenario: &Scenario, initial: &[GridPos], steps: usize) -> Result<Rollout> {
    let m = scenario.grid.m;
    rollout_with(scenario, initial, steps, |i, pos, t| {
        Ok(tables[i].greedy(tabular_state(m, steps, pos[i], t)))
    })
}

/// Independent tabular Q-learners with the level-3 reward.
pub fn tabular_ql_train(run: &RunConfig) -> Result<TabularOutcome> {
    let scenario = run.scenario(Algorithm::Ducm1)?;
    let cfg = Ducm1Config::resolve(run, &scenario)?;
    if cfg.level != 3 {
        return Err(Error::InvalidConfig("tabular baseline supports level 3 only".into()));
    }
    let (m, steps, n) = (scenario.grid.m, cfg.steps_per_episode, cfg.n_uavs);
    let mut tables = vec![QTable::new(m * m * (steps + 1)); n];
    let mut rngs: Vec<_> = (0..n).map(|i| stream(cfg.seed, "tabular-explore", i as u64)).collect();
    let alive = vec![true; n];
    let mut reports = Vec::with_capacity(cfg.n_episodes);
    let mut best_connected = None;

    for episode in 1..=cfg.n_episodes {
        let start = Instant::now();
        let mut pos = cfg.initial_positions.clone();
        let mut totals = StepTotals::new(n);
        for t in 0..steps {
            let actions: Vec<Action> = (0..n)
                .map(|i| {
                    use rand::Rng;
                    let rng = &mut rngs[i];
                    if rng.random::<f64>() < cfg.dqn.epsilon {
                        Action::ALL[rng.random_range(0..Action::COUNT)]
                    } else {
                        tables[i].greedy(tabular_state(m, steps, pos[i], t))
                    }
                })
                .collect();
            let moved = scenario.apply_moves(&pos, &alive, &actions);
            let assoc = scenario.associate(&moved.positions, &alive, t + 1);
            totals.connected += assoc.connected_total;
            let ctx = scenario.reward_context(&assoc, &moved.positions, &alive, &moved.out_of_bound, t + 1, &cfg.reward);
            for i in 0..n {
                let r = reward_for_level(3, i, &ctx);
                totals.reward_sum[i] += r;
                totals.reward_count[i] += 1;
                let next = (t + 1 < steps).then(|| tabular_state(m, steps, moved.positions[i], t + 1));
                tables[i].update(
                    tabular_state(m, steps, pos[i], t),
                    actions[i],
                    r,
                    next,
                    cfg.tabular_lr,
                    cfg.dqn.gamma,
                );
            }
            pos = moved.positions;
        }
        let mut report = totals.into_report(episode, EpisodeKind::Single, elapsed_ms(start, cfg.record_wall_time));
        if cfg.eval_every > 0 && (episode % cfg.eval_every == 0 || episode == cfg.n_episodes) {
            let got = tabular_rollout(&tables, &scenario, &cfg.initial_positions, steps)?.final_connected();
            best_connected = Some(best_connected.map_or(got, |b: usize| b.max(got)));
            report.greedy_final = Some(got);
        }
        reports.push(report);
    }
    Ok(TabularOutcome {
        tables,
        reports,
        best_connected,
    })
}
