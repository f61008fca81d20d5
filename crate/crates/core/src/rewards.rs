//! Per-agent rewards for the four information-exchange levels and for the
//! dynamic-fleet trainer.
//!
//! Level 1 rewards a UAV's own connected users, level 2 the fleet average,
//! level 3 its own users minus a proximity penalty against every other
//! active UAV. Level 4 reuses the level-2 reward; it differs only in the
//! state the agents observe. Every level subtracts the individual
//! out-of-bound penalty.

use serde::{Deserialize, Serialize};

use crate::gridworld::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardContext {
    pub per_uav_connected: Vec<usize>,
    pub uav_positions: Vec<Point>,
    pub alive: Vec<bool>,
    pub out_of_bound: Vec<bool>,
    /// `|U_t|`
    pub n_users: usize,
    pub d_p: f64,
    /// Coverage radius in meters.
    pub r: f64,
    pub f_penalty: f64,
}

impl RewardContext {
    /// `|I_t|`
    pub fn n_active(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn total_connected(&self) -> usize {
        self.per_uav_connected
            .iter()
            .zip(&self.alive)
            .filter(|(_, &a)| a)
            .map(|(&c, _)| c)
            .sum()
    }

    /// `d_p * |I_t| / |U_t|`
    pub fn p_max(&self) -> f64 {
        if self.n_users == 0 {
            return 0.0;
        }
        self.d_p * self.n_active() as f64 / self.n_users as f64
    }

    fn out_of_bound_penalty(&self, i: usize) -> f64 {
        if self.out_of_bound[i] {
            self.f_penalty
        } else {
            0.0
        }
    }

    fn fleet_average(&self) -> f64 {
        match self.n_active() {
            0 => 0.0,
            n => self.total_connected() as f64 / n as f64,
        }
    }

    fn proximity_penalty(&self, i: usize) -> f64 {
        (0..self.alive.len())
            .filter(|&j| j != i && self.alive[j])
            .map(|j| distance_penalty(i, j, self))
            .sum()
    }
}

/// Which connectivity term the dynamic-fleet reward uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ducm2RewardForm {
    /// Fleet-average connectivity, as the reward equation is printed.
    #[default]
    GlobalAverage,
    /// The UAV's own connectivity, as in level 3.
    OwnConnectivity,
}

/// `max(0, (1 - d_ij / 2r) * p_max)`
pub fn distance_penalty(i: usize, j: usize, ctx: &RewardContext) -> f64 {
    let d = ctx.uav_positions[i].dist(&ctx.uav_positions[j]);
    ((1.0 - d / (2.0 * ctx.r)) * ctx.p_max()).max(0.0)
}

pub fn reward_level1(i: usize, ctx: &RewardContext) -> f64 {
    ctx.per_uav_connected[i] as f64 - ctx.out_of_bound_penalty(i)
}

pub fn reward_level2(i: usize, ctx: &RewardContext) -> f64 {
    ctx.fleet_average() - ctx.out_of_bound_penalty(i)
}

pub fn reward_level3(i: usize, ctx: &RewardContext) -> f64 {
    ctx.per_uav_connected[i] as f64 - ctx.proximity_penalty(i) - ctx.out_of_bound_penalty(i)
}

/// `ctx` must already be restricted to the UAVs of the agent's environment copy.
pub fn reward_ducm2(i: usize, ctx: &RewardContext, form: Ducm2RewardForm) -> f64 {
    let connectivity = match form {
        Ducm2RewardForm::GlobalAverage => ctx.fleet_average(),
        Ducm2RewardForm::OwnConnectivity => ctx.per_uav_connected[i] as f64,
    };
    connectivity - ctx.proximity_penalty(i) - ctx.out_of_bound_penalty(i)
}

/// Reward of agent `i` under information-exchange `level` (1..=4).
pub fn reward_for_level(level: u8, i: usize, ctx: &RewardContext) -> f64 {
    match level {
        1 => reward_level1(i, ctx),
        3 => reward_level3(i, ctx),
        _ => reward_level2(i, ctx),
    }
}
