//! Multi-agent training for a fleet that changes during the horizon.
//!
//! Agents observe `(x, y, live code, t)`. Odd episodes keep the full fleet
//! alive; even episodes retire UAVs one by one in random order from copy 1
//! into a second environment copy, where they keep training. Both copies
//! feed each agent's single replay buffer.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ducm1::{elapsed_ms, new_agents, with_context, EpisodeReport, StepTotals};
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridPos};
use crate::harness::checkpoint::{BestPolicies, Checkpoint, TrainerKind, FORMAT_VERSION};
use crate::harness::config::{Algorithm, RunConfig};
use crate::harness::metrics::EpisodeKind;
use crate::neural::{argmax, DqnAgent, DqnParams, Experience, Mlp};
use crate::rewards::reward_ducm2;
use crate::rng::{stream, RngState};
use crate::scenario::Scenario;

/// Fleet on-off vector; bit `i` belongs to UAV id `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LiveCode {
    pub bits: Vec<bool>,
}

impl LiveCode {
    pub fn new(bits: Vec<bool>) -> Self {
        LiveCode { bits }
    }

    /// `sum_i L_i 2^i` over zero-based ids.
    pub fn integer(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| 1u64 << i)
            .sum()
    }

    pub fn value(&self) -> f64 {
        live_code(&self.bits, self.bits.len())
    }

    pub fn complement(&self) -> LiveCode {
        LiveCode::new(self.bits.iter().map(|b| !b).collect())
    }

    /// Inverse of [`LiveCode::value`]; `None` unless `value` is an exact code.
    pub fn from_value(value: f64, n_max: usize) -> Option<Self> {
        let scaled = value * (1u64 << n_max) as f64;
        if !(0.0..(1u64 << n_max) as f64).contains(&scaled) || scaled.fract() != 0.0 {
            return None;
        }
        let k = scaled as u64;
        Some(LiveCode::new((0..n_max).map(|i| k >> i & 1 == 1).collect()))
    }
}

/// `sum_i L_i 2^(i-1) / 2^n_max` with one-based `i`.
pub fn live_code(bits: &[bool], n_max: usize) -> f64 {
    debug_assert_eq!(bits.len(), n_max);
    LiveCode::new(bits.to_vec()).integer() as f64 / (1u64 << n_max) as f64
}

/// Live code seen in copy 2: the code of the negated vector.
pub fn complement_code(bits: &[bool]) -> f64 {
    let neg: Vec<bool> = bits.iter().map(|b| !b).collect();
    live_code(&neg, bits.len())
}

/// `(x / (M-1), y / (M-1), code, t / T)`.
pub fn build_state2(pos: GridPos, code: f64, t: usize, m: usize, steps: usize) -> Vec<f64> {
    let scale = (m - 1) as f64;
    vec![pos.x as f64 / scale, pos.y as f64 / scale, code, t as f64 / steps as f64]
}

/// State of `agent`, which must be alive in exactly one copy.
pub fn agent_state2(
    agent: usize,
    positions: &[GridPos],
    in_copy1: &[bool],
    in_copy2: &[bool],
    t: usize,
    m: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let code = match (in_copy1[agent], in_copy2[agent]) {
        (true, false) => live_code(in_copy1, in_copy1.len()),
        (false, true) => complement_code(in_copy1),
        (a, b) => {
            return Err(Error::InvalidState(format!(
                "UAV {agent} alive in copy 1: {a}, copy 2: {b}"
            )))
        }
    };
    Ok(build_state2(positions[agent], code, t, m, steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    FullSet,
    QuitSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub kind: PlanKind,
    /// Quit order; the last id stays in copy 1.
    pub quit_order: Vec<usize>,
    pub quit_interval: usize,
}

impl EpisodePlan {
    /// UAV that quits at the start of step `t`.
    pub fn quit_at(&self, t: usize) -> Option<usize> {
        if self.kind != PlanKind::QuitSequence || t == 0 || !t.is_multiple_of(self.quit_interval) {
            return None;
        }
        let k = t / self.quit_interval;
        (k < self.quit_order.len()).then(|| self.quit_order[k - 1])
    }

    /// Steps at which quits happen.
    pub fn quit_times(&self) -> Vec<usize> {
        match self.kind {
            PlanKind::FullSet => Vec::new(),
            PlanKind::QuitSequence => (1..self.quit_order.len()).map(|k| k * self.quit_interval).collect(),
        }
    }
}

/// `2 (M - 1)`, the step count between the two farthest intersections.
pub fn default_quit_interval(m: usize) -> usize {
    2 * (m - 1)
}

/// Odd episodes keep the full fleet; even ones retire UAVs in a uniformly
/// random order at `k * quit_interval`, `k = 1..n_max-1`.
pub fn make_episode_plan<R: Rng + ?Sized>(
    episode: usize,
    rng: &mut R,
    n_max: usize,
    quit_interval: usize,
) -> Result<EpisodePlan> {
    if episode == 0 {
        return Err(Error::PlanViolation("episodes are numbered from 1".into()));
    }
    if quit_interval == 0 {
        return Err(Error::PlanViolation("quit interval must be positive".into()));
    }
    let mut quit_order: Vec<usize> = (0..n_max).collect();
    let kind = if episode % 2 == 1 {
        PlanKind::FullSet
    } else {
        quit_order.shuffle(rng);
        PlanKind::QuitSequence
    };
    Ok(EpisodePlan {
        kind,
        quit_order,
        quit_interval,
    })
}

/// Where each agent currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Copy {
    First,
    Second,
}

/// A run configuration resolved for the dynamic-fleet trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Ducm2Config {
    pub n_max: usize,
    pub n_episodes: usize,
    pub steps_per_episode: usize,
    pub quit_interval: usize,
    pub initial_positions: Vec<GridPos>,
    pub entry_position: GridPos,
    pub dqn: DqnParams,
    pub reward: crate::harness::config::RewardConfig,
    pub eval_every: usize,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Ducm2Config {
    pub fn resolve(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        let cfg = Ducm2Config {
            n_max: run.fleet.n_uavs,
            n_episodes: run.learning.n_episodes,
            steps_per_episode: run.ducm2.steps_per_episode,
            quit_interval: run.quit_interval(),
            initial_positions: run.initial_positions(),
            entry_position: run.ducm2.entry_position,
            dqn: run.dqn_params(Algorithm::Ducm2),
            reward: run.reward.clone(),
            eval_every: run.learning.eval_every,
            seed: run.seed,
            record_wall_time: run.record_wall_time,
        };
        if (cfg.n_max - 1) * cfg.quit_interval >= cfg.steps_per_episode {
            return Err(Error::PlanViolation(format!(
                "{} quits every {} steps do not fit in {} steps",
                cfg.n_max - 1,
                cfg.quit_interval,
                cfg.steps_per_episode
            )));
        }
        Ok(cfg)
    }
}

/// Dynamic-fleet trainer.
pub struct Ducm2Trainer {
    run: RunConfig,
    cfg: Ducm2Config,
    copy1: Scenario,
    copy2: Scenario,
    agents: Vec<DqnAgent>,
    plan_rng: ChaCha8Rng,
    episode: usize,
    best: Option<BestPolicies>,
}

impl Ducm2Trainer {
    pub fn new(run: RunConfig) -> Result<Self> {
        let cfg = Ducm2Config::resolve(&run)?;
        let copy1 = run.scenario(Algorithm::Ducm2)?;
        let copy2 = run.copy2_scenario()?;
        let agents = new_agents(cfg.seed, cfg.n_max, 4, &cfg.dqn)?;
        Ok(Ducm2Trainer {
            plan_rng: stream(cfg.seed, "quit-order", 0),
            run,
            cfg,
            copy1,
            copy2,
            agents,
            episode: 0,
            best: None,
        })
    }

    pub fn from_checkpoint(run: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        ckpt.verify_config(&run)?;
        if ckpt.trainer != TrainerKind::Ducm2 {
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
        t.plan_rng = ckpt
            .plan_rng
            .ok_or_else(|| Error::CorruptCheckpoint("missing quit-order stream".into()))?
            .restore()?;
        t.episode = ckpt.episode;
        t.best = ckpt.best;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash: self.run.hash(),
            config: self.run.clone(),
            trainer: TrainerKind::Ducm2,
            episode: self.episode,
            agents: self.agents.iter().map(DqnAgent::to_record).collect(),
            best: self.best.clone(),
            plan_rng: Some(RngState::capture(&self.plan_rng)),
        }
    }

    pub fn config(&self) -> &Ducm2Config {
        &self.cfg
    }

    pub fn scenario(&self) -> &Scenario {
        &self.copy1
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn policies(&self) -> Vec<Mlp> {
        self.agents.iter().map(|a| a.main.clone()).collect()
    }

    pub fn best(&self) -> Option<&BestPolicies> {
        self.best.as_ref()
    }

    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let start = Instant::now();
        let episode = self.episode + 1;
        let plan = make_episode_plan(episode, &mut self.plan_rng, self.cfg.n_max, self.cfg.quit_interval)?;
        let report = self.run_planned(episode, &plan)?;
        self.episode = episode;
        let mut report = report;
        if self.cfg.eval_every > 0 && (episode.is_multiple_of(self.cfg.eval_every) || episode == self.cfg.n_episodes) {
            let policies = self.policies();
            let got = eval_full_set(&policies, &self.copy1, &self.cfg, &self.cfg.initial_positions)?;
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

    /// One training episode following `plan`. The episode metric counts
    /// copy-1 connectivity.
    pub fn run_planned(&mut self, episode: usize, plan: &EpisodePlan) -> Result<EpisodeReport> {
        let n = self.cfg.n_max;
        let steps = self.cfg.steps_per_episode;
        let m = self.copy1.grid.m;
        let eps = self.cfg.dqn.epsilon;
        let mut pos = self.cfg.initial_positions.clone();
        let mut copy = vec![Copy::First; n];
        let mut totals = StepTotals::new(n);

        for t in 0..steps {
            if let Some(q) = plan.quit_at(t) {
                if copy[q] != Copy::First {
                    return Err(Error::PlanViolation(format!("UAV {q} quits twice")));
                }
                copy[q] = Copy::Second;
            }
            let in1: Vec<bool> = copy.iter().map(|&c| c == Copy::First).collect();
            let in2: Vec<bool> = in1.iter().map(|b| !b).collect();
            let states = (0..n)
                .map(|i| agent_state2(i, &pos, &in1, &in2, t, m, steps))
                .collect::<Result<Vec<_>>>()?;
            let actions = self
                .agents
                .iter_mut()
                .zip(&states)
                .map(|(agent, s)| agent.epsilon_greedy(s, eps))
                .collect::<Result<Vec<_>>>()?;
            let moved = self.copy1.apply_moves(&pos, &vec![true; n], &actions);

            let mut rewards = vec![0.0; n];
            for (k, (scenario, mask)) in [(&self.copy1, &in1), (&self.copy2, &in2)].into_iter().enumerate() {
                if !mask.iter().any(|&a| a) {
                    continue;
                }
                let assoc = scenario.associate(&moved.positions, mask, t + 1);
                if k == 0 {
                    totals.connected += assoc.connected_total;
                }
                let ctx = scenario.reward_context(&assoc, &moved.positions, mask, &moved.out_of_bound, t + 1, &self.cfg.reward);
                for i in (0..n).filter(|&i| mask[i]) {
                    rewards[i] = reward_ducm2(i, &ctx, self.cfg.reward.ducm2_form);
                }
            }

            let terminal = t + 1 == steps;
            for (i, (agent, s)) in self.agents.iter_mut().zip(states).enumerate() {
                let r = rewards[i];
                totals.reward_sum[i] += r;
                totals.reward_count[i] += 1;
                let s_next = agent_state2(i, &moved.positions, &in1, &in2, t + 1, m, steps)?;
                agent.buffer.push(Experience {
                    s,
                    a: actions[i].code(),
                    s_next,
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
        Ok(totals.into_report(episode, EpisodeKind::for_ducm2(episode), 0))
    }

    pub fn train(&mut self, mut on_episode: impl FnMut(&Self, &EpisodeReport) -> Result<()>) -> Result<()> {
        while self.episode < self.cfg.n_episodes {
            let report = self.run_episode()?;
            on_episode(self, &report)?;
        }
        Ok(())
    }
}

fn eval_full_set(policies: &[Mlp], scenario: &Scenario, cfg: &Ducm2Config, initial: &[GridPos]) -> Result<usize> {
    let script = EventScript {
        initial_active: None,
        events: Vec::new(),
    };
    let out = eval_dynamic(policies, scenario, cfg.steps_per_episode, initial, cfg.entry_position, &script)?;
    Ok(out.final_connected())
}

#[derive(Debug, Clone)]
pub struct Train2Outcome {
    pub policies: Vec<Mlp>,
    pub best: Option<BestPolicies>,
    pub reports: Vec<EpisodeReport>,
}

pub fn train2(run: &RunConfig) -> Result<Train2Outcome> {
    let mut trainer = Ducm2Trainer::new(run.clone())?;
    let mut reports = Vec::with_capacity(trainer.cfg.n_episodes);
    trainer.train(|_, r| {
        reports.push(r.clone());
        Ok(())
    })?;
    Ok(Train2Outcome {
        policies: trainer.policies(),
        best: trainer.best,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Quit,
    Join,
}

/// A quit or join applied at the start of step `t`. A join may name its
/// entry intersection; otherwise the configured entry position is used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub t: usize,
    pub event: EventKind,
    pub uav: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventScript {
    /// UAVs active at `t = 0`; the whole fleet when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_active: Option<Vec<usize>>,
    pub events: Vec<Event>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Events(Vec<Event>),
    Full(EventScript),
}

impl EventScript {
    /// Accepts either a bare event array or `{"initial_active": [...], "events": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(match serde_json::from_str(text)? {
            ScriptFile::Events(events) => EventScript {
                initial_active: None,
                events,
            },
            ScriptFile::Full(s) => s,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn quits(order: &[usize], interval: usize) -> Self {
        EventScript {
            initial_active: None,
            events: order
                .iter()
                .enumerate()
                .map(|(k, &uav)| Event {
                    t: (k + 1) * interval,
                    event: EventKind::Quit,
                    uav,
                    x: None,
                    y: None,
                })
                .collect(),
        }
    }

    /// Starts with `order[0]` alone; the others join in order.
    pub fn joins(order: &[usize], interval: usize) -> Self {
        EventScript {
            initial_active: Some(vec![order[0]]),
            events: order[1..]
                .iter()
                .enumerate()
                .map(|(k, &uav)| Event {
                    t: (k + 1) * interval,
                    event: EventKind::Join,
                    uav,
                    x: None,
                    y: None,
                })
                .collect(),
        }
    }

    fn initial_mask(&self, n_max: usize) -> Result<Vec<bool>> {
        match &self.initial_active {
            None => Ok(vec![true; n_max]),
            Some(ids) => {
                let mut mask = vec![false; n_max];
                for &i in ids {
                    if i >= n_max || mask[i] {
                        return Err(Error::ScriptViolation(format!("bad initial UAV {i}")));
                    }
                    mask[i] = true;
                }
                Ok(mask)
            }
        }
    }

    /// Checks ordering, ids and that the active count stays in `[1, n_max]`.
    pub fn validate(&self, n_max: usize, steps: usize, grid_m: usize) -> Result<()> {
        let mut alive = self.initial_mask(n_max)?;
        let bad = |msg: String| Err(Error::ScriptViolation(msg));
        if !alive.iter().any(|&a| a) {
            return bad("no UAV active at the start".into());
        }
        let mut last = 0;
        for e in &self.events {
            if e.t == 0 || e.t >= steps || e.t <= last {
                return bad(format!("event times must increase within 1..{steps}, got {}", e.t));
            }
            last = e.t;
            if e.uav >= n_max {
                return bad(format!("unknown UAV {}", e.uav));
            }
            match e.event {
                EventKind::Quit => {
                    if !alive[e.uav] {
                        return bad(format!("UAV {} quits while inactive", e.uav));
                    }
                    alive[e.uav] = false;
                    if !alive.iter().any(|&a| a) {
                        return bad(format!("no UAV left after t = {}", e.t));
                    }
                }
                EventKind::Join => {
                    if alive[e.uav] {
                        return bad(format!("UAV {} joins while active", e.uav));
                    }
                    if e.x.is_some() != e.y.is_some() || e.x.is_some_and(|x| x >= grid_m) || e.y.is_some_and(|y| y >= grid_m)
                    {
                        return bad(format!("bad entry position for UAV {}", e.uav));
                    }
                    alive[e.uav] = true;
                }
            }
        }
        Ok(())
    }
}

/// Steady connectivity of one phase between consecutive events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: usize,
    pub active_count: usize,
    /// Step at which the phase was measured.
    pub t: usize,
    pub connected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicEval {
    pub phases: Vec<PhaseResult>,
    /// Index 0 is the start; entry `t + 1` follows the moves of step `t`.
    pub connected: Vec<usize>,
    pub positions: Vec<Vec<GridPos>>,
    pub alive: Vec<Vec<bool>>,
}

impl DynamicEval {
    pub fn final_connected(&self) -> usize {
        *self.connected.last().expect("evaluation has a start entry")
    }
}

/// Greedy rollout under an event script. Each phase is measured at the
/// last step before the next event (or at the horizon).
pub fn eval_dynamic(
    policies: &[Mlp],
    scenario: &Scenario,
    steps: usize,
    initial: &[GridPos],
    entry: GridPos,
    script: &EventScript,
) -> Result<DynamicEval> {
    let n = policies.len();
    let m = scenario.grid.m;
    if initial.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: initial.len(),
        });
    }
    script.validate(n, steps, m)?;
    let mut alive = script.initial_mask(n)?;
    let mut pos = initial.to_vec();
    let mut out = DynamicEval {
        phases: Vec::new(),
        connected: vec![scenario.connected(&pos, &alive, 0)],
        positions: vec![pos.clone()],
        alive: vec![alive.clone()],
    };
    let mut events = script.events.iter().peekable();
    let phase_end = |t: usize, alive: &[bool], out: &mut DynamicEval| {
        out.phases.push(PhaseResult {
            phase: out.phases.len(),
            active_count: alive.iter().filter(|&&a| a).count(),
            t,
            connected: out.connected[t],
        });
    };

    for t in 0..steps {
        let mut changed = false;
        while let Some(e) = events.next_if(|e| e.t == t) {
            if !changed {
                phase_end(t, &alive, &mut out);
                changed = true;
            }
            match e.event {
                EventKind::Quit => alive[e.uav] = false,
                EventKind::Join => {
                    alive[e.uav] = true;
                    pos[e.uav] = match (e.x, e.y) {
                        (Some(x), Some(y)) => GridPos::new(x, y),
                        _ => entry,
                    };
                }
            }
        }
        let code = live_code(&alive, n);
        let actions = (0..n)
            .map(|i| {
                if !alive[i] {
                    return Ok(Action::Hover);
                }
                let q = policies[i].forward_one(&build_state2(pos[i], code, t, m, steps))?;
                Ok(Action::ALL[argmax(&q)])
            })
            .collect::<Result<Vec<_>>>()?;
        pos = scenario.apply_moves(&pos, &alive, &actions).positions;
        out.connected.push(scenario.connected(&pos, &alive, t + 1));
        out.positions.push(pos.clone());
        out.alive.push(alive.clone());
    }
    phase_end(steps, &alive, &mut out);
    Ok(out)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot has a successor");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Sets of UAV ids present in each copy; used by tests of complementarity.
pub fn copy_partition(bits: &[bool]) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let first = (0..bits.len()).filter(|&i| bits[i]).collect();
    let second = (0..bits.len()).filter(|&i| !bits[i]).collect();
    (first, second)
}
