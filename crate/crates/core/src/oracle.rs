//! Exhaustive single-step placement search over grid intersections.
//!
//! Placements are unordered multisets of `k` grid points, enumerated as
//! non-decreasing index tuples; UAV ids follow the sorted order. Among
//! equally good placements the lexicographically smallest tuple wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::associate_links;
use crate::error::{Error, Result};
use crate::gridworld::{GridPos, GridSpec, Point};
use crate::radio::{ChannelParams, LinkBudget};

/// Default ceiling on the number of placements evaluated.
pub const DEFAULT_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_positions: Vec<GridPos>,
    pub best_connected: usize,
    /// Placements enumerated (each either associated or bounded below the best).
    pub evaluated: u64,
}

/// `C(n + k - 1, k)`, the number of size-`k` multisets over `n` points.
pub fn placement_count(n: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (n as u128 + i) / (i + 1);
    }
    c
}

struct Table {
    n_users: usize,
    gains: Vec<Vec<f64>>,
    covers: Vec<Vec<bool>>,
    bits: Vec<Vec<u64>>,
    /// `min(N_rb, covered users)` per point.
    cap: Vec<usize>,
}

impl Table {
    fn build(grid: &GridSpec, users: &[Point], params: &ChannelParams) -> Self {
        let n = grid.n_points();
        let words = users.len().div_ceil(64);
        let mut t = Table {
            n_users: users.len(),
            gains: Vec::with_capacity(n),
            covers: Vec::with_capacity(n),
            bits: Vec::with_capacity(n),
            cap: Vec::with_capacity(n),
        };
        for p in 0..n {
            let at = grid.to_meters(grid.point_at(p));
            let links = LinkBudget::compute(&[at], &[true], users, params);
            let covers: Vec<bool> = (0..users.len()).map(|u| links.covers(u, 0)).collect();
            let mut bits = vec![0u64; words];
            for (u, _) in covers.iter().enumerate().filter(|(_, &c)| c) {
                bits[u / 64] |= 1 << (u % 64);
            }
            t.gains.push((0..users.len()).map(|u| links.gain(u, 0)).collect());
            t.cap.push(covers.iter().filter(|&&c| c).count().min(params.n_rb));
            t.covers.push(covers);
            t.bits.push(bits);
        }
        t
    }

    fn upper_bound(&self, tuple: &[usize], scratch: &mut [u64]) -> usize {
        let per_uav: usize = tuple.iter().map(|&p| self.cap[p]).sum();
        scratch.fill(0);
        for &p in tuple {
            for (s, b) in scratch.iter_mut().zip(&self.bits[p]) {
                *s |= b;
            }
        }
        let union = scratch.iter().map(|w| w.count_ones() as usize).sum();
        per_uav.min(union)
    }

    fn connected(&self, tuple: &[usize], params: &ChannelParams) -> usize {
        let gains: Vec<&[f64]> = tuple.iter().map(|&p| self.gains[p].as_slice()).collect();
        let covers: Vec<&[bool]> = tuple.iter().map(|&p| self.covers[p].as_slice()).collect();
        associate_links(&LinkBudget::from_columns(self.n_users, &gains, &covers), params).connected_total
    }
}

/// Advances a non-decreasing tuple whose entries lie in `lo..n`, keeping
/// `tuple[0]` fixed. Returns false when exhausted.
fn next_tail(tuple: &mut [usize], n: usize) -> bool {
    let k = tuple.len();
    let mut i = k;
    while i > 1 {
        i -= 1;
        if tuple[i] + 1 < n {
            let v = tuple[i] + 1;
            tuple[i..].fill(v);
            return true;
        }
    }
    false
}

pub fn brute_force_placement(k: usize, grid: &GridSpec, users: &[Point], params: &ChannelParams) -> Result<OracleResult> {
    brute_force_placement_with_budget(k, grid, users, params, DEFAULT_BUDGET)
}

pub fn brute_force_placement_with_budget(
    k: usize,
    grid: &GridSpec,
    users: &[Point],
    params: &ChannelParams,
    budget: u128,
) -> Result<OracleResult> {
    grid.validate()?;
    params.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("oracle needs k >= 1".into()));
    }
    let n = grid.n_points();
    let required = placement_count(n, k);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let table = Table::build(grid, users, params);
    let words = users.len().div_ceil(64);

    let chunks: Vec<(usize, Vec<usize>, u64)> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut tuple = vec![first; k];
            let mut scratch = vec![0u64; words];
            let mut best: Option<(usize, Vec<usize>)> = None;
            let mut count = 0u64;
            loop {
                count += 1;
                let floor = best.as_ref().map(|b| b.0);
                if floor.is_none_or(|f| table.upper_bound(&tuple, &mut scratch) > f) {
                    let c = table.connected(&tuple, params);
                    if floor.is_none_or(|f| c > f) {
                        best = Some((c, tuple.clone()));
                    }
                }
                if !next_tail(&mut tuple, n) {
                    break;
                }
            }
            let (c, t) = best.expect("every chunk holds at least one placement");
            (c, t, count)
        })
        .collect();

    let evaluated = chunks.iter().map(|c| c.2).sum();
    let (best_connected, tuple, _) = chunks
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .expect("grid has at least one point");
    Ok(OracleResult {
        best_positions: tuple.iter().map(|&p| grid.point_at(p)).collect(),
        best_connected,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::associate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize) -> GridSpec {
        GridSpec::new(m, 100.0).unwrap()
    }

    fn check(res: &OracleResult, g: &GridSpec, users: &[Point], p: &ChannelParams) {
        let pts: Vec<Point> = res.best_positions.iter().map(|&q| g.to_meters(q)).collect();
        let r = associate(&pts, &vec![true; pts.len()], users, p);
        assert_eq!(r.connected_total, res.best_connected);
        assert!(res.best_positions.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn counts() {
        assert_eq!(placement_count(49, 1), 49);
        assert_eq!(placement_count(49, 3), 20825);
        assert_eq!(placement_count(121, 5), 234_531_275);
        assert_eq!(placement_count(25, 2), 325);
    }

    #[test]
    fn single_hotspot() {
        let g = grid(7);
        let p = ChannelParams::default();
        let users: Vec<Point> = (0..15)
            .map(|i| Point::new(300.0 + 40.0 * (i as f64 / 15.0 * std::f64::consts::TAU).cos(), 300.0 + 40.0 * (i as f64 / 15.0 * std::f64::consts::TAU).sin()))
            .collect();
        let res = brute_force_placement(1, &g, &users, &p).unwrap();
        assert_eq!(res.best_connected, 15);
        assert_eq!(res.evaluated, 49);
        check(&res, &g, &users, &p);
        // smallest optimal intersection in (x, y) order
        let first_opt = (0..49)
            .map(|i| g.point_at(i))
            .find(|&q| associate(&[g.to_meters(q)], &[true], &users, &p).connected_total == 15)
            .unwrap();
        assert_eq!(res.best_positions, vec![first_opt]);
    }

    #[test]
    fn capacity_bound() {
        let g = grid(5);
        let users = vec![Point::new(200.0, 200.0); 25];
        let res = brute_force_placement(1, &g, &users, &ChannelParams::default()).unwrap();
        assert_eq!(res.best_connected, 20);
    }

    #[test]
    fn two_clusters() {
        let g = grid(5);
        let p = ChannelParams::default();
        let mut users = vec![Point::new(0.0, 0.0); 10];
        users.extend(vec![Point::new(400.0, 400.0); 10]);
        let res = brute_force_placement(2, &g, &users, &p).unwrap();
        assert_eq!(res.best_connected, 20);
        assert_eq!(res.evaluated, 325);
        check(&res, &g, &users, &p);
        let far = |q: GridPos| g.to_meters(q).dist(&Point::new(0.0, 0.0));
        assert!(far(res.best_positions[0]) < 300.0 && far(res.best_positions[1]) > 300.0);
    }

    #[test]
    fn budget_guard() {
        let g = grid(11);
        let err = brute_force_placement(5, &g, &[Point::new(0.0, 0.0)], &ChannelParams::default()).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { required: 234_531_275, .. }));
    }

    /// Plain enumeration of every multiset without pruning.
    fn naive(k: usize, g: &GridSpec, users: &[Point], p: &ChannelParams) -> usize {
        let n = g.n_points();
        let mut tuple = vec![0usize; k];
        let mut best = 0;
        loop {
            let pts: Vec<Point> = tuple.iter().map(|&i| g.to_meters(g.point_at(i))).collect();
            best = best.max(associate(&pts, &vec![true; k], users, p).connected_total);
            let mut i = k;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if tuple[i] + 1 < n {
                    let v = tuple[i] + 1;
                    tuple[i..].fill(v);
                    break;
                }
            }
        }
    }

    #[test]
    fn matches_naive_and_is_monotone() {
        let g = grid(4);
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let users: Vec<Point> = (0..35)
                .map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
                .collect();
            let mut prev = 0;
            for k in 1..=3 {
                let res = brute_force_placement(k, &g, &users, &p).unwrap();
                assert_eq!(res.best_connected, naive(k, &g, &users, &p));
                check(&res, &g, &users, &p);
                assert!(res.best_connected >= prev);
                prev = res.best_connected;
            }
        }
    }
}
