//! Fixed inputs for the hot-path benchmarks.

use ucn_core::gridworld::{generate_users, GridSpec, HotspotSpec, Point};
use ucn_core::neural::{Experience, Mlp, Optimizer, OptimizerKind};
use ucn_core::rng::stream;

pub fn hotspot_users(m: usize, n_users: usize, n_hotspots: usize, seed: u64) -> (GridSpec, Vec<Point>) {
    let grid = GridSpec::new(m, 100.0).expect("valid grid");
    let spec = HotspotSpec {
        n_hotspots,
        hotspot_radius: 100.0,
        p_hot: 0.8,
        n_users,
        seed,
    };
    let users = generate_users(&spec, &grid).expect("valid hotspot spec");
    (grid, users)
}

/// `k` UAVs spread along the grid diagonal.
pub fn diagonal_uavs(grid: &GridSpec, k: usize) -> Vec<Point> {
    let side = grid.side_len();
    (0..k)
        .map(|i| {
            let f = (i as f64 + 0.5) / k as f64;
            Point::new(f * side, f * side)
        })
        .collect()
}

/// A main/target pair, its optimizer and a batch of synthetic transitions.
pub struct StepFixture {
    pub main: Mlp,
    pub target: Mlp,
    pub optimizer: Optimizer,
    pub batch: Vec<Experience>,
}

pub fn step_fixture(dims: &[usize], batch_size: usize) -> StepFixture {
    let mut rng = stream(7, "bench", 0);
    let main = Mlp::new(dims, &mut rng).expect("valid dims");
    let target = Mlp::new(dims, &mut rng).expect("valid dims");
    let d = dims[0];
    let batch = (0..batch_size)
        .map(|b| Experience {
            s: (0..d).map(|j| ((b * 7 + j * 3) % 11) as f64 / 10.0).collect(),
            a: (b % 5) as u8,
            s_next: (0..d).map(|j| ((b * 5 + j * 2) % 11) as f64 / 10.0).collect(),
            r: (b % 17) as f64,
            terminal: b % 50 == 0,
        })
        .collect();
    StepFixture {
        optimizer: Optimizer::new(OptimizerKind::Adam, 2.5e-4, &main),
        main,
        target,
        batch,
    }
}
