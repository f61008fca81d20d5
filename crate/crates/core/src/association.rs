//! Two-stage user admission and association.
//!
//! Each covered user asks its best-gain UAV first. UAVs handle their request
//! queues in ascending id order, admitting users by descending gain while RBs
//! last; a user that does not fit is skipped and later users are still
//! considered. Users left out retry with their next-best untried UAV until
//! nobody has a UAV left to ask. RBs are handed out in index order and an
//! admitted user is never re-checked when later allocations add interference.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridworld::Point;
use crate::radio::{rb_demand, AllocationState, ChannelParams, LinkBudget};

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    n_uavs: usize,
    /// Row-major user x UAV connectivity matrix.
    x: Vec<u8>,
    /// RBs held by each user (0 when unconnected).
    pub rb_demand_per_user: Vec<usize>,
    pub rate_per_user: Vec<f64>,
    pub rb_used_per_uav: Vec<usize>,
    pub connected_total: usize,
}

impl AssociationResult {
    pub fn n_users(&self) -> usize {
        self.rb_demand_per_user.len()
    }

    pub fn n_uavs(&self) -> usize {
        self.n_uavs
    }

    pub fn x(&self, user: usize, uav: usize) -> u8 {
        self.x[user * self.n_uavs + uav]
    }

    /// The UAV serving `user`, if any.
    pub fn serving(&self, user: usize) -> Option<usize> {
        (0..self.n_uavs).find(|&i| self.x(user, i) == 1)
    }

    pub fn per_uav_connected(&self) -> Vec<usize> {
        (0..self.n_uavs)
            .map(|i| (0..self.n_users()).filter(|&u| self.x(u, i) == 1).count())
            .collect()
    }

    /// Verifies C1 (binary X), C2 (at most one UAV per user), C3 (RB cap),
    /// the minimum-rate guarantee and the internal totals.
    pub fn check_constraints(&self, params: &ChannelParams) -> std::result::Result<(), String> {
        if self.x.iter().any(|&v| v > 1) {
            return Err("C1: X has a non-binary entry".into());
        }
        let mut per_uav_rbs = vec![0usize; self.n_uavs];
        let mut total = 0;
        for u in 0..self.n_users() {
            let links: usize = (0..self.n_uavs).map(|i| self.x(u, i) as usize).sum();
            if links > 1 {
                return Err(format!("C2: user {u} holds {links} links"));
            }
            match self.serving(u) {
                Some(i) => {
                    total += 1;
                    per_uav_rbs[i] += self.rb_demand_per_user[u];
                    if self.rate_per_user[u] < params.r_min_bps {
                        return Err(format!(
                            "user {u} connected at {} b/s < r_min",
                            self.rate_per_user[u]
                        ));
                    }
                    if self.rb_demand_per_user[u] == 0 {
                        return Err(format!("user {u} connected without RBs"));
                    }
                }
                None if self.rb_demand_per_user[u] != 0 => {
                    return Err(format!("unconnected user {u} holds RBs"));
                }
                None => {}
            }
        }
        for (i, &rbs) in per_uav_rbs.iter().enumerate() {
            if rbs > params.n_rb {
                return Err(format!("C3: UAV {i} allocates {rbs} > {} RBs", params.n_rb));
            }
            if rbs != self.rb_used_per_uav[i] {
                return Err(format!("UAV {i} RB bookkeeping mismatch"));
            }
        }
        if total != self.connected_total {
            return Err("connected_total does not match X".into());
        }
        Ok(())
    }

    /// Debug dump, one row per connected user: `user_id,uav_id,n_rbs,rate_bps`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "user_id,uav_id,n_rbs,rate_bps").expect("write to Vec");
        for u in 0..self.n_users() {
            if let Some(i) = self.serving(u) {
                writeln!(
                    out,
                    "{u},{i},{},{}",
                    self.rb_demand_per_user[u], self.rate_per_user[u]
                )
                .expect("write to Vec");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Runs the admission rounds for one scene. UAVs with `alive = false` take
/// no part; uncovered users simply stay unconnected.
pub fn associate(
    uav_positions: &[Point],
    alive: &[bool],
    users: &[Point],
    params: &ChannelParams,
) -> AssociationResult {
    associate_links(&LinkBudget::compute(uav_positions, alive, users, params), params)
}

/// [`associate`] on precomputed gains and coverage flags.
pub fn associate_links(links: &LinkBudget, params: &ChannelParams) -> AssociationResult {
    let n_uavs = links.n_uavs();
    let n_users = links.n_users();
    let prefs: Vec<Vec<usize>> = (0..n_users).map(|u| links.preference_list(u)).collect();
    let mut next_choice = vec![0usize; n_users];
    let mut serving: Vec<Option<usize>> = vec![None; n_users];
    let mut demand = vec![0usize; n_users];
    let mut rate = vec![0.0; n_users];
    let mut alloc = AllocationState::empty(n_uavs);
    let mut requests: Vec<Vec<usize>> = vec![Vec::new(); n_uavs];

    loop {
        let mut any = false;
        for u in 0..n_users {
            if serving[u].is_none() && next_choice[u] < prefs[u].len() {
                requests[prefs[u][next_choice[u]]].push(u);
                next_choice[u] += 1;
                any = true;
            }
        }
        if !any {
            break;
        }
        for (i, queue) in requests.iter_mut().enumerate() {
            queue.sort_by(|&a, &b| links.gain(b, i).total_cmp(&links.gain(a, i)).then(a.cmp(&b)));
            for &u in queue.iter() {
                let fit = rb_demand(u, i, links, &alloc, params).expect("requests only go to covering UAVs");
                if let Some(d) = fit {
                    alloc.rb_used[i] += d.n_rbs;
                    serving[u] = Some(i);
                    demand[u] = d.n_rbs;
                    rate[u] = d.rate_bps;
                }
            }
            queue.clear();
        }
    }

    let mut x = vec![0u8; n_users * n_uavs];
    for (u, s) in serving.iter().enumerate() {
        if let Some(i) = s {
            x[u * n_uavs + i] = 1;
        }
    }
    AssociationResult {
        n_uavs,
        x,
        rb_demand_per_user: demand,
        rate_per_user: rate,
        rb_used_per_uav: alloc.rb_used,
        connected_total: serving.iter().filter(|s| s.is_some()).count(),
    }
}

/// `sum_u sum_i X[u, i]`.
pub fn connectivity_count(result: &AssociationResult) -> usize {
    result.x.iter().map(|&v| v as usize).sum()
}
