//! Air-to-ground link budget: free-space path loss plus a constant excess
//! loss, per-RB SINR with co-channel interference from overlapping UAVs, and
//! the RB demand of a user.
//!
//! All SINR arithmetic happens in the linear domain; PSDs are converted from
//! dBm/Hz to mW/Hz once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::Point;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub fc_hz: f64,
    /// Excess (LoS) path loss.
    pub eta_db: f64,
    pub pt_dbm_hz: f64,
    pub n0_dbm_hz: f64,
    pub bw_rb_hz: f64,
    pub r_min_bps: f64,
    pub altitude_m: f64,
    /// Full aperture angle of the directional antenna, degrees.
    pub aperture_deg: f64,
    /// RBs per UAV.
    pub n_rb: usize,
    /// Gain is `10^(-PL / divisor)`; 10 is the power-gain form.
    pub gain_exponent_divisor: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            fc_hz: 2e9,
            eta_db: 1.0,
            pt_dbm_hz: -49.5,
            n0_dbm_hz: -174.0,
            bw_rb_hz: 180e3,
            r_min_bps: 250e3,
            altitude_m: 350.0,
            aperture_deg: 60.0,
            n_rb: 20,
            gain_exponent_divisor: 10.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("channel: {what}")));
        if !(self.fc_hz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if !(self.bw_rb_hz > 0.0) {
            return bad("RB bandwidth must be positive");
        }
        if !(self.r_min_bps > 0.0) {
            return bad("minimum rate must be positive");
        }
        if !(self.altitude_m > 0.0) {
            return bad("altitude must be positive");
        }
        if !(self.aperture_deg > 0.0 && self.aperture_deg < 180.0) {
            return bad("aperture angle must lie in (0, 180) degrees");
        }
        if !(self.gain_exponent_divisor > 0.0) {
            return bad("gain exponent divisor must be positive");
        }
        if self.n_rb == 0 {
            return bad("a UAV needs at least one RB");
        }
        Ok(())
    }

    /// Ground coverage radius `r = H * tan(theta / 2)`.
    pub fn coverage_radius(&self) -> f64 {
        self.altitude_m * (self.aperture_deg.to_radians() / 2.0).tan()
    }

    pub fn pt_mw_hz(&self) -> f64 {
        dbm_to_mw(self.pt_dbm_hz)
    }

    pub fn n0_mw_hz(&self) -> f64 {
        dbm_to_mw(self.n0_dbm_hz)
    }

    /// Channel gain under the configured exponent divisor.
    pub fn gain(&self, pl_db: f64) -> f64 {
        10f64.powf(-pl_db / self.gain_exponent_divisor)
    }

    /// Slant distance between a UAV above `uav` and a user at `user`.
    pub fn slant_distance(&self, uav: &Point, user: &Point) -> f64 {
        uav.dist(user).hypot(self.altitude_m)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// `20 log10(4 pi fc d / c) + eta`.
pub fn path_loss_db(d: f64, params: &ChannelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidDistance(d));
    }
    Ok(loss_db(d, params))
}

fn loss_db(d: f64, params: &ChannelParams) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * params.fc_hz * d / SPEED_OF_LIGHT).log10() + params.eta_db
}

/// `10^(-PL / 20)`.
pub fn channel_gain(pl_db: f64) -> f64 {
    10f64.powf(-pl_db / 20.0)
}

/// Per-UAV RB occupancy. UAV `j` occupies RB indices `1..=rb_used[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllocationState {
    pub rb_used: Vec<usize>,
}

impl AllocationState {
    pub fn empty(n_uavs: usize) -> Self {
        AllocationState {
            rb_used: vec![0; n_uavs],
        }
    }
}

/// Gains and coverage flags for every (user, UAV) pair of a scene.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    n_uavs: usize,
    n_users: usize,
    gains: Vec<f64>,
    covers: Vec<bool>,
}

impl LinkBudget {
    /// Dead UAVs neither cover nor interfere.
    pub fn compute(uavs: &[Point], alive: &[bool], users: &[Point], params: &ChannelParams) -> Self {
        debug_assert_eq!(uavs.len(), alive.len());
        let r = params.coverage_radius();
        let n_uavs = uavs.len();
        let mut gains = Vec::with_capacity(users.len() * n_uavs);
        let mut covers = Vec::with_capacity(users.len() * n_uavs);
        for user in users {
            for (uav, &on) in uavs.iter().zip(alive) {
                let d = params.slant_distance(uav, user);
                // d >= altitude > 0, so the path loss is always defined
                gains.push(params.gain(loss_db(d, params)));
                covers.push(on && uav.dist(user) <= r);
            }
        }
        LinkBudget {
            n_uavs,
            n_users: users.len(),
            gains,
            covers,
        }
    }

    /// Builds a scene from per-UAV columns, e.g. rows of a table
    /// precomputed for every grid point: `gains[i][u]`, `covers[i][u]`.
    pub fn from_columns(n_users: usize, gains: &[&[f64]], covers: &[&[bool]]) -> Self {
        let n_uavs = gains.len();
        let mut out = LinkBudget {
            n_uavs,
            n_users,
            gains: Vec::with_capacity(n_users * n_uavs),
            covers: Vec::with_capacity(n_users * n_uavs),
        };
        for u in 0..n_users {
            for i in 0..n_uavs {
                out.gains.push(gains[i][u]);
                out.covers.push(covers[i][u]);
            }
        }
        out
    }

    pub fn n_uavs(&self) -> usize {
        self.n_uavs
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn gain(&self, user: usize, uav: usize) -> f64 {
        self.gains[user * self.n_uavs + uav]
    }

    pub fn covers(&self, user: usize, uav: usize) -> bool {
        self.covers[user * self.n_uavs + uav]
    }

    /// Covering UAVs of `user`, best gain first (ties: lower id).
    pub fn preference_list(&self, user: usize) -> Vec<usize> {
        let mut list: Vec<usize> = (0..self.n_uavs).filter(|&i| self.covers(user, i)).collect();
        list.sort_by(|&a, &b| {
            self.gain(user, b)
                .total_cmp(&self.gain(user, a))
                .then(a.cmp(&b))
        });
        list
    }
}

/// Linear SINR of `user` served by `serving` on RB `rb` (1-based). Every
/// other UAV that covers the user and already occupies `rb` interferes.
pub fn sinr_on_rb(
    user: usize,
    serving: usize,
    rb: usize,
    links: &LinkBudget,
    alloc: &AllocationState,
    params: &ChannelParams,
) -> Result<f64> {
    if !links.covers(user, serving) {
        return Err(Error::NotCovered { user, uav: serving });
    }
    if rb == 0 || rb > params.n_rb {
        return Err(Error::InvalidRb { rb, n_rb: params.n_rb });
    }
    Ok(sinr_unchecked(user, serving, rb, links, alloc, params))
}

fn sinr_unchecked(
    user: usize,
    serving: usize,
    rb: usize,
    links: &LinkBudget,
    alloc: &AllocationState,
    params: &ChannelParams,
) -> f64 {
    let pt = params.pt_mw_hz();
    let interference: f64 = (0..links.n_uavs())
        .filter(|&j| j != serving && links.covers(user, j) && alloc.rb_used[j] >= rb)
        .map(|j| pt * links.gain(user, j))
        .sum();
    pt * links.gain(user, serving) / (params.n0_mw_hz() + interference)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbDemand {
    pub n_rbs: usize,
    pub rate_bps: f64,
}

/// Smallest number of consecutive RBs, starting after the serving UAV's
/// current allocation, whose summed rate reaches `r_min`. `None` when the
/// remaining RBs cannot reach it.
pub fn rb_demand(
    user: usize,
    serving: usize,
    links: &LinkBudget,
    alloc: &AllocationState,
    params: &ChannelParams,
) -> Result<Option<RbDemand>> {
    if !links.covers(user, serving) {
        return Err(Error::NotCovered { user, uav: serving });
    }
    let first = alloc.rb_used[serving] + 1;
    let mut rate = 0.0;
    for rb in first..=params.n_rb {
        rate += params.bw_rb_hz * (1.0 + sinr_unchecked(user, serving, rb, links, alloc, params)).log2();
        if rate >= params.r_min_bps {
            return Ok(Some(RbDemand {
                n_rbs: rb + 1 - first,
                rate_bps: rate,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    fn to_db(x: f64) -> f64 {
        10.0 * x.log10()
    }

    #[test]
    fn path_loss_golden() {
        let p = ChannelParams::default();
        assert_close!(path_loss_db(350.0, &p).unwrap(), 90.34, 0.01);
        let d_unit = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * p.fc_hz);
        let p0 = ChannelParams { eta_db: 0.0, ..p.clone() };
        assert_close!(path_loss_db(d_unit, &p0).unwrap(), 0.0, 1e-12);
        for fc in [9e8, 2e9, 2.8e10] {
            let q = ChannelParams { fc_hz: fc, ..p.clone() };
            let slope = path_loss_db(700.0, &q).unwrap() - path_loss_db(350.0, &q).unwrap();
            assert_close!(slope, 20.0 * 2f64.log10(), 1e-9);
        }
        assert!(matches!(path_loss_db(0.0, &p), Err(Error::InvalidDistance(_))));
    }

    #[test]
    fn gain_values() {
        assert_eq!(channel_gain(0.0), 1.0);
        assert_close!(channel_gain(20.0), 0.1, 1e-15);
        let g = channel_gain(90.34);
        assert!((g - 3.04e-5).abs() / 3.04e-5 < 0.01);
    }

    #[test]
    fn coverage_radius_table_values() {
        assert_close!(ChannelParams::default().coverage_radius(), 202.07, 0.01);
    }

    fn single(users: &[Point], uavs: &[Point]) -> (LinkBudget, ChannelParams) {
        let p = ChannelParams::default();
        let alive = vec![true; uavs.len()];
        (LinkBudget::compute(uavs, &alive, users, &p), p)
    }

    #[test]
    fn snr_beneath_uav() {
        let (links, p) = single(&[Point::new(500.0, 500.0)], &[Point::new(500.0, 500.0)]);
        let snr = sinr_on_rb(0, 0, 1, &links, &AllocationState::empty(1), &p).unwrap();
        assert_close!(to_db(snr), 34.16, 0.05);
    }

    #[test]
    fn symmetric_interferer_gives_zero_db() {
        let uavs = [Point::new(400.0, 500.0), Point::new(600.0, 500.0)];
        let (links, p) = single(&[Point::new(500.0, 500.0)], &uavs);
        let alloc = AllocationState { rb_used: vec![0, 3] };
        let sinr = sinr_on_rb(0, 0, 2, &links, &alloc, &p).unwrap();
        assert_close!(to_db(sinr), 0.0, 0.01);
        // RB 4 is free at the interferer
        let snr = sinr_on_rb(0, 0, 4, &links, &alloc, &p).unwrap();
        let clean = sinr_on_rb(0, 0, 1, &links, &AllocationState::empty(2), &p).unwrap();
        assert_eq!(snr, clean);
        // S / (N + S) with S = SNR * N
        assert!((sinr - clean / (1.0 + clean)).abs() < 1e-12);
    }

    #[test]
    fn sinr_errors() {
        let (links, p) = single(&[Point::new(0.0, 0.0)], &[Point::new(500.0, 500.0)]);
        let alloc = AllocationState::empty(1);
        assert!(matches!(
            sinr_on_rb(0, 0, 1, &links, &alloc, &p),
            Err(Error::NotCovered { .. })
        ));
        assert!(rb_demand(0, 0, &links, &alloc, &p).is_err());
        let (links, p) = single(&[Point::new(0.0, 0.0)], &[Point::new(0.0, 0.0)]);
        assert!(sinr_on_rb(0, 0, 21, &links, &alloc, &p).is_err());
        assert!(sinr_on_rb(0, 0, 0, &links, &alloc, &p).is_err());
    }

    #[test]
    fn demand_beneath_uav() {
        let (links, p) = single(&[Point::new(0.0, 0.0)], &[Point::new(0.0, 0.0)]);
        let d = rb_demand(0, 0, &links, &AllocationState::empty(1), &p).unwrap().unwrap();
        assert_eq!(d.n_rbs, 1);
        assert!((d.rate_bps - 2.04e6).abs() / 2.04e6 < 0.01);
    }

    #[test]
    fn demand_matches_closed_form_without_interference() {
        let (links, base) = single(&[Point::new(120.0, 0.0)], &[Point::new(0.0, 0.0)]);
        let snr = sinr_on_rb(0, 0, 1, &links, &AllocationState::empty(1), &base).unwrap();
        let per_rb = base.bw_rb_hz * (1.0 + snr).log2();
        for r_min in [1e5, 2.5e5, 3e6, 7.7e6, 1.5e7] {
            let p = ChannelParams { r_min_bps: r_min, ..base.clone() };
            let d = rb_demand(0, 0, &links, &AllocationState::empty(1), &p).unwrap().unwrap();
            assert_eq!(d.n_rbs, (r_min / per_rb).ceil() as usize);
        }
        let p = ChannelParams {
            r_min_bps: per_rb * 20.0 * 1.001,
            ..base.clone()
        };
        assert!(rb_demand(0, 0, &links, &AllocationState::empty(1), &p).unwrap().is_none());
        // partially used UAV has fewer RBs left
        let p = ChannelParams { r_min_bps: per_rb * 3.5, ..base };
        let alloc = AllocationState { rb_used: vec![17] };
        assert!(rb_demand(0, 0, &links, &alloc, &p).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn path_loss_increasing(d in 1.0f64..5000.0, dd in 1e-3f64..100.0) {
            let p = ChannelParams::default();
            prop_assert!(path_loss_db(d + dd, &p).unwrap() > path_loss_db(d, &p).unwrap());
        }

        #[test]
        fn interference_never_helps(
            ux in 0.0f64..1000.0, uy in 0.0f64..1000.0,
            others in proptest::collection::vec((0.0f64..1000.0, 0.0f64..1000.0, 0usize..21), 1..5),
            rb in 1usize..21,
        ) {
            let p = ChannelParams::default();
            let user = Point::new(ux, uy);
            let mut uavs = vec![user];
            let mut used = vec![0];
            let base_links = LinkBudget::compute(&uavs, &[true], &[user], &p);
            let mut prev = sinr_on_rb(0, 0, rb, &base_links, &AllocationState::empty(1), &p).unwrap();
            for (x, y, k) in others {
                uavs.push(Point::new(x, y));
                used.push(k);
                let links = LinkBudget::compute(&uavs, &vec![true; uavs.len()], &[user], &p);
                let alloc = AllocationState { rb_used: used.clone() };
                let s = sinr_on_rb(0, 0, rb, &links, &alloc, &p).unwrap();
                prop_assert!(s <= prev);
                prev = s;
            }
        }

        #[test]
        fn demand_is_minimal(x in 0.0f64..200.0, r_min in 1e4f64..5e6) {
            let p = ChannelParams { r_min_bps: r_min, ..ChannelParams::default() };
            let (links, _) = single(&[Point::new(x, 0.0)], &[Point::new(0.0, 0.0)]);
            let alloc = AllocationState::empty(1);
            if let Some(d) = rb_demand(0, 0, &links, &alloc, &p).unwrap() {
                let per_rb = p.bw_rb_hz * (1.0 + sinr_on_rb(0, 0, 1, &links, &alloc, &p).unwrap()).log2();
                prop_assert!(d.rate_bps >= r_min);
                prop_assert!(d.n_rbs == 1 || per_rb * ((d.n_rbs - 1) as f64) < r_min);
            }
        }
    }
}
