//! One environment: grid, channel and the user layout over time, plus the
//! joint-move step shared by both trainers and the evaluators.

use crate::association::{associate, AssociationResult};
use crate::gridworld::{apply_action, Action, GridPos, GridSpec, Point, UavState, UserLayout};
use crate::harness::config::RewardConfig;
use crate::radio::ChannelParams;
use crate::rewards::RewardContext;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridSpec,
    pub channel: ChannelParams,
    pub users: UserLayout,
}

/// Outcome of applying every UAV's action at once.
#[derive(Debug, Clone, PartialEq)]
pub struct Moved {
    pub positions: Vec<GridPos>,
    pub out_of_bound: Vec<bool>,
}

impl Scenario {
    pub fn points(&self, positions: &[GridPos]) -> Vec<Point> {
        positions.iter().map(|&p| self.grid.to_meters(p)).collect()
    }

    pub fn users_at(&self, t: usize) -> &[Point] {
        self.users.active_layout(t)
    }

    /// Association of the users active at step `t`.
    pub fn associate(&self, positions: &[GridPos], alive: &[bool], t: usize) -> AssociationResult {
        associate(&self.points(positions), alive, self.users_at(t), &self.channel)
    }

    pub fn connected(&self, positions: &[GridPos], alive: &[bool], t: usize) -> usize {
        self.associate(positions, alive, t).connected_total
    }

    /// Simultaneous move; UAVs with `alive = false` stay put.
    pub fn apply_moves(&self, positions: &[GridPos], alive: &[bool], actions: &[Action]) -> Moved {
        let mut out = Moved {
            positions: positions.to_vec(),
            out_of_bound: vec![false; positions.len()],
        };
        for (i, (&pos, &a)) in positions.iter().zip(actions).enumerate() {
            if !alive[i] {
                continue;
            }
            let (next, oob) = apply_action(&UavState { id: i, pos, alive: true }, a, &self.grid);
            out.positions[i] = next.pos;
            out.out_of_bound[i] = oob;
        }
        out
    }

    pub fn reward_context(
        &self,
        assoc: &AssociationResult,
        positions: &[GridPos],
        alive: &[bool],
        out_of_bound: &[bool],
        t: usize,
        reward: &RewardConfig,
    ) -> RewardContext {
        RewardContext {
            per_uav_connected: assoc.per_uav_connected(),
            uav_positions: self.points(positions),
            alive: alive.to_vec(),
            out_of_bound: out_of_bound.to_vec(),
            n_users: self.users_at(t).len(),
            d_p: reward.d_p,
            r: self.channel.coverage_radius(),
            f_penalty: reward.f_penalty,
        }
    }
}
