//! The discretized target region, UAV motion and user layouts.
//!
//! UAVs live on the intersections of an `M x M` grid spanning an `L x L`
//! region (`L = (M - 1) * cell_len`). Users live anywhere in `[0, L]^2`, in
//! meters. A [`UserLayout`] can switch abruptly between several user
//! distributions at scheduled step indices.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Intersections per side.
    pub m: usize,
    /// Meters per grid step.
    pub cell_len: f64,
}

impl GridSpec {
    pub fn new(m: usize, cell_len: f64) -> Result<Self> {
        let grid = GridSpec { m, cell_len };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("grid needs M >= 2, got {}", self.m)));
        }
        if !(self.cell_len > 0.0 && self.cell_len.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cell length must be positive, got {}",
                self.cell_len
            )));
        }
        Ok(())
    }

    /// Region side length `L` in meters.
    pub fn side_len(&self) -> f64 {
        (self.m - 1) as f64 * self.cell_len
    }

    pub fn max_index(&self) -> usize {
        self.m - 1
    }

    pub fn contains(&self, pos: GridPos) -> bool {
        pos.x < self.m && pos.y < self.m
    }

    pub fn to_meters(&self, pos: GridPos) -> Point {
        Point {
            x: pos.x as f64 * self.cell_len,
            y: pos.y as f64 * self.cell_len,
        }
    }

    /// Number of intersections, `M^2`.
    pub fn n_points(&self) -> usize {
        self.m * self.m
    }

    /// Intersection with linear index `idx`, ordered lexicographically by `(x, y)`.
    pub fn point_at(&self, idx: usize) -> GridPos {
        GridPos {
            x: idx / self.m,
            y: idx % self.m,
        }
    }

    pub fn index_of(&self, pos: GridPos) -> usize {
        pos.x * self.m + pos.y
    }
}

/// A grid intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub x: usize,
    pub y: usize,
}

impl GridPos {
    pub const fn new(x: usize, y: usize) -> Self {
        GridPos { x, y }
    }
}

/// A ground position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One of the five horizontal movements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Hover = 0,
    /// -x
    Left = 1,
    /// +x
    Right = 2,
    /// +y
    Forward = 3,
    /// -y
    Backward = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Hover,
        Action::Left,
        Action::Right,
        Action::Forward,
        Action::Backward,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Action::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::InvalidAction(code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UavState {
    pub id: usize,
    pub pos: GridPos,
    pub alive: bool,
}

/// Move one grid step. A move that would leave the grid keeps the UAV where
/// it is and reports `out_of_bound = true`.
pub fn apply_action(state: &UavState, action: Action, grid: &GridSpec) -> (UavState, bool) {
    let GridPos { x, y } = state.pos;
    let max = grid.max_index();
    let target = match action {
        Action::Hover => Some((x, y)),
        Action::Left => x.checked_sub(1).map(|x| (x, y)),
        Action::Right => (x < max).then(|| (x + 1, y)),
        Action::Forward => (y < max).then(|| (x, y + 1)),
        Action::Backward => y.checked_sub(1).map(|y| (x, y)),
    };
    match target {
        Some((x, y)) => (
            UavState {
                pos: GridPos { x, y },
                ..*state
            },
            false,
        ),
        None => (*state, true),
    }
}

/// Parameters of a hotspot user distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotSpec {
    pub n_hotspots: usize,
    pub hotspot_radius: f64,
    pub p_hot: f64,
    pub n_users: usize,
    pub seed: u64,
}

impl HotspotSpec {
    pub fn n_hot_users(&self) -> usize {
        (self.p_hot * self.n_users as f64).round() as usize
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_hot) {
            return Err(Error::InvalidConfig(format!(
                "hotspot fraction must lie in [0, 1], got {}",
                self.p_hot
            )));
        }
        if self.n_hot_users() > 0 {
            if self.n_hotspots == 0 {
                return Err(Error::InvalidConfig(
                    "hotspot users requested but n_hotspots = 0".into(),
                ));
            }
            if !(self.hotspot_radius >= 0.0) || 2.0 * self.hotspot_radius > grid.side_len() {
                return Err(Error::InvalidConfig(format!(
                    "hotspot radius {} does not fit a {} m region",
                    self.hotspot_radius,
                    grid.side_len()
                )));
            }
        }
        Ok(())
    }
}

/// A user distribution active from `t_start` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEpoch {
    pub t_start: usize,
    pub users: Vec<Point>,
}

/// User positions, possibly switching at scheduled steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLayout {
    epochs: Vec<LayoutEpoch>,
}

impl UserLayout {
    pub fn stationary(users: Vec<Point>) -> Self {
        UserLayout {
            epochs: vec![LayoutEpoch { t_start: 0, users }],
        }
    }

    pub fn scheduled(epochs: Vec<LayoutEpoch>) -> Result<Self> {
        match epochs.first() {
            Some(first) if first.t_start == 0 => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "layout schedule must start with an entry at t = 0".into(),
                ))
            }
        }
        if epochs.windows(2).any(|w| w[1].t_start <= w[0].t_start) {
            return Err(Error::InvalidConfig(
                "layout schedule start times must be strictly increasing".into(),
            ));
        }
        Ok(UserLayout { epochs })
    }

    pub fn epochs(&self) -> &[LayoutEpoch] {
        &self.epochs
    }

    pub fn is_dynamic(&self) -> bool {
        self.epochs.len() > 1
    }

    /// Users of the epoch with the greatest `t_start <= t`.
    pub fn active_layout(&self, t: usize) -> &[Point] {
        let idx = self.epochs.partition_point(|e| e.t_start <= t);
        &self.epochs[idx.saturating_sub(1)].users
    }

    /// Checks every user lies inside `[0, L]^2`.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let side = grid.side_len();
        for epoch in &self.epochs {
            if let Some(p) = epoch
                .users
                .iter()
                .find(|p| !(0.0..=side).contains(&p.x) || !(0.0..=side).contains(&p.y))
            {
                return Err(Error::InvalidConfig(format!(
                    "user at ({}, {}) lies outside the {side} m region",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// Hotspot centers are kept at least one radius from every edge so that each
/// hotspot disk lies inside the region.
pub fn generate_users(spec: &HotspotSpec, grid: &GridSpec) -> Result<Vec<Point>> {
    grid.validate()?;
    spec.validate(grid)?;
    let side = grid.side_len();
    let n_hot = spec.n_hot_users().min(spec.n_users);
    let mut rng: ChaCha8Rng = rng::stream(spec.seed, "layout", 0);
    let mut users = Vec::with_capacity(spec.n_users);

    if n_hot > 0 {
        let radius = spec.hotspot_radius;
        let centers = draw_centers(&mut rng, spec, side);
        for k in 0..n_hot {
            let c = centers[k % centers.len()];
            // uniform over the disk
            let rho = radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            let p = Point::new(
                (c.x + rho * phi.cos()).clamp(0.0, side),
                (c.y + rho * phi.sin()).clamp(0.0, side),
            );
            users.push(p);
        }
    }
    for _ in n_hot..spec.n_users {
        users.push(Point::new(
            rng.random_range(0.0..=side),
            rng.random_range(0.0..=side),
        ));
    }
    Ok(users)
}

/// Stationary layout drawn from `spec`.
pub fn generate_layout(spec: &HotspotSpec, grid: &GridSpec) -> Result<UserLayout> {
    Ok(UserLayout::stationary(generate_users(spec, grid)?))
}

/// Hotspot centers that [`generate_users`] draws for `spec`.
pub fn hotspot_centers(spec: &HotspotSpec, grid: &GridSpec) -> Vec<Point> {
    if spec.n_hot_users() == 0 {
        return Vec::new();
    }
    let mut rng: ChaCha8Rng = rng::stream(spec.seed, "layout", 0);
    draw_centers(&mut rng, spec, grid.side_len())
}

fn draw_centers(rng: &mut ChaCha8Rng, spec: &HotspotSpec, side: f64) -> Vec<Point> {
    let radius = spec.hotspot_radius;
    (0..spec.n_hotspots)
        .map(|_| {
            Point::new(
                rng.random_range(radius..=side - radius),
                rng.random_range(radius..=side - radius),
            )
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct UserRow {
    user_id: usize,
    x_m: f64,
    y_m: f64,
}

pub fn write_users_csv(path: &Path, users: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (user_id, p) in users.iter().enumerate() {
        w.serialize(UserRow {
            user_id,
            x_m: p.x,
            y_m: p.y,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads `user_id,x_m,y_m`; rows are placed by `user_id`, which must be a
/// permutation of `0..n`.
pub fn read_users_csv(path: &Path) -> Result<Vec<Point>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<UserRow> = r.deserialize().collect::<Result<_, _>>()?;
    rows.sort_by_key(|row| row.user_id);
    if rows.iter().enumerate().any(|(i, row)| row.user_id != i) {
        return Err(Error::InvalidConfig(format!(
            "{}: user ids must be 0..n without gaps",
            path.display()
        )));
    }
    Ok(rows.into_iter().map(|r| Point::new(r.x_m, r.y_m)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t_start: usize,
    pub layout_file: PathBuf,
}

/// Loads a JSON schedule manifest; layout files resolve relative to the
/// manifest's directory.
pub fn read_schedule_manifest(path: &Path) -> Result<UserLayout> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ScheduleEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let epochs = entries
        .iter()
        .map(|e| {
            Ok(LayoutEpoch {
                t_start: e.t_start,
                users: read_users_csv(&base.join(&e.layout_file))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    UserLayout::scheduled(epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn grid() -> GridSpec {
        GridSpec::new(11, 100.0).unwrap()
    }

    fn uav(x: usize, y: usize) -> UavState {
        UavState {
            id: 0,
            pos: GridPos::new(x, y),
            alive: true,
        }
    }

    #[test]
    fn clamps_at_boundary() {
        let (s, oob) = apply_action(&uav(0, 0), Action::Left, &grid());
        assert_eq!(s.pos, GridPos::new(0, 0));
        assert!(oob);
        let (s, oob) = apply_action(&uav(10, 10), Action::Forward, &grid());
        assert_eq!(s.pos, GridPos::new(10, 10));
        assert!(oob);
    }

    #[test]
    fn hover_and_unit_steps() {
        let (s, oob) = apply_action(&uav(3, 3), Action::Hover, &grid());
        assert_eq!((s.pos, oob), (GridPos::new(3, 3), false));
        let (s, oob) = apply_action(&uav(3, 3), Action::Right, &grid());
        assert_eq!((s.pos, oob), (GridPos::new(4, 3), false));
        let (s, _) = apply_action(&uav(3, 3), Action::Backward, &grid());
        assert_eq!(s.pos, GridPos::new(3, 2));
        let (s, oob) = apply_action(&uav(0, 0), Action::Hover, &grid());
        assert_eq!((s.pos, oob), (GridPos::new(0, 0), false));
    }

    #[test]
    fn action_codes() {
        assert_eq!(Action::try_from(2).unwrap(), Action::Right);
        assert!(matches!(Action::try_from(5), Err(Error::InvalidAction(5))));
    }

    #[test]
    fn zero_fraction_layout_is_uniform() {
        let spec = HotspotSpec {
            n_hotspots: 0,
            hotspot_radius: 100.0,
            p_hot: 0.0,
            n_users: 10,
            seed: 1,
        };
        let users = generate_users(&spec, &grid()).unwrap();
        assert_eq!(users.len(), 10);
        // with no hotspot draws consumed, the first user is the first uniform draw
        let mut rng = rng::stream(1, "layout", 0);
        let x: f64 = rng.random_range(0.0..=1000.0);
        assert_eq!(users[0].x, x);
    }

    #[test]
    fn hotspot_counts() {
        let spec = HotspotSpec {
            n_hotspots: 4,
            hotspot_radius: 100.0,
            p_hot: 0.8,
            n_users: 100,
            seed: 42,
        };
        let g = grid();
        let users = generate_users(&spec, &g).unwrap();
        assert_eq!(users.len(), 100);
        let centers = hotspot_centers(&spec, &g);
        let in_hotspot = |p: &Point| centers.iter().any(|c| c.dist(p) <= 100.0 + 1e-9);
        assert!(users[..80].iter().all(in_hotspot));
        assert!(users.iter().filter(|p| in_hotspot(p)).count() >= 80);
        assert_eq!(users, generate_users(&spec, &g).unwrap());
    }

    #[test]
    fn rejects_hotspot_users_without_hotspots() {
        let spec = HotspotSpec {
            n_hotspots: 0,
            hotspot_radius: 100.0,
            p_hot: 0.5,
            n_users: 10,
            seed: 1,
        };
        assert!(generate_users(&spec, &grid()).is_err());
    }

    #[test]
    fn epoch_selection() {
        let a = vec![Point::new(1.0, 1.0)];
        let b = vec![Point::new(2.0, 2.0)];
        let layout = UserLayout::scheduled(vec![
            LayoutEpoch {
                t_start: 0,
                users: a.clone(),
            },
            LayoutEpoch {
                t_start: 50,
                users: b.clone(),
            },
        ])
        .unwrap();
        assert_eq!(layout.active_layout(49), a.as_slice());
        assert_eq!(layout.active_layout(50), b.as_slice());
        let single = UserLayout::stationary(a.clone());
        assert_eq!(single.active_layout(99), a.as_slice());
    }

    #[test]
    fn schedule_validation() {
        let e = |t| LayoutEpoch {
            t_start: t,
            users: vec![],
        };
        assert!(UserLayout::scheduled(vec![e(1)]).is_err());
        assert!(UserLayout::scheduled(vec![e(0), e(5), e(5)]).is_err());
        assert!(UserLayout::scheduled(vec![]).is_err());
    }

    #[test]
    fn csv_and_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let a = vec![Point::new(10.5, 20.25), Point::new(0.0, 999.0)];
        let b = vec![Point::new(500.0, 500.0)];
        write_users_csv(&dir.path().join("a.csv"), &a).unwrap();
        write_users_csv(&dir.path().join("b.csv"), &b).unwrap();
        assert_eq!(read_users_csv(&dir.path().join("a.csv")).unwrap(), a);
        let manifest = dir.path().join("schedule.json");
        fs::write(
            &manifest,
            r#"[{"t_start":0,"layout_file":"a.csv"},{"t_start":50,"layout_file":"b.csv"}]"#,
        )
        .unwrap();
        let layout = read_schedule_manifest(&manifest).unwrap();
        assert_eq!(layout.active_layout(10), a.as_slice());
        assert_eq!(layout.active_layout(60), b.as_slice());
    }

    proptest! {
        #[test]
        fn positions_stay_in_bounds(m in 2usize..12, codes in proptest::collection::vec(0u8..5, 0..200)) {
            let g = GridSpec::new(m, 100.0).unwrap();
            let mut s = uav(0, 0);
            for c in codes {
                let before = g.to_meters(s.pos);
                let (next, oob) = apply_action(&s, Action::try_from(c).unwrap(), &g);
                prop_assert!(g.contains(next.pos));
                let moved = g.to_meters(next.pos).dist(&before);
                if oob || c == 0 {
                    prop_assert_eq!(moved, 0.0);
                } else {
                    prop_assert_eq!(moved, g.cell_len);
                }
                s = next;
            }
        }

        #[test]
        fn hotspot_lower_bound(seed in any::<u64>(), p in 0.0f64..=1.0, n in 1usize..80) {
            let g = grid();
            let spec = HotspotSpec { n_hotspots: 3, hotspot_radius: 100.0, p_hot: p, n_users: n, seed };
            let users = generate_users(&spec, &g).unwrap();
            let centers = hotspot_centers(&spec, &g);
            let inside = users.iter().filter(|u| centers.iter().any(|c| c.dist(u) <= 100.0 + 1e-9)).count();
            prop_assert!(inside >= spec.n_hot_users());
            prop_assert!(UserLayout::stationary(users).validate(&g).is_ok());
        }
    }
}
