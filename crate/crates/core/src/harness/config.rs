//! Run configuration. JSON, unknown keys rejected, every default taken from
//! the reference simulation table where it gives one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gridworld::{
    generate_users, read_schedule_manifest, read_users_csv, GridPos, GridSpec, HotspotSpec, LayoutEpoch,
    UserLayout,
};
use crate::neural::{DqnParams, OptimizerKind};
use crate::radio::ChannelParams;
use crate::rewards::Ducm2RewardForm;
use crate::rng::derive_seed;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub users: UsersConfig,
    pub channel: ChannelParams,
    pub fleet: FleetConfig,
    pub reward: RewardConfig,
    pub learning: LearningConfig,
    pub ducm1: Ducm1Section,
    pub ducm2: Ducm2Section,
    /// Write real wall-clock times into the metrics; off keeps metrics
    /// files byte-reproducible.
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub m: usize,
    pub cell_len: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { m: 11, cell_len: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UsersConfig {
    pub n_users: usize,
    pub p_hot: f64,
    pub n_hotspots: usize,
    pub hotspot_radius: f64,
    /// Layout seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    /// Explicit `user_id,x_m,y_m` layout instead of generating one.
    pub layout_file: Option<PathBuf>,
    /// JSON schedule manifest instead of generating layouts.
    pub schedule_file: Option<PathBuf>,
    /// Second user distribution that replaces the first mid-horizon.
    pub dynamic: Option<DynamicUsers>,
}

impl Default for UsersConfig {
    fn default() -> Self {
        UsersConfig {
            n_users: 100,
            p_hot: 0.8,
            n_hotspots: 4,
            hotspot_radius: 100.0,
            seed: None,
            layout_file: None,
            schedule_file: None,
            dynamic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicUsers {
    /// Switch step; half the horizon when absent.
    #[serde(default)]
    pub t_start: Option<usize>,
    pub p_hot: f64,
    pub n_hotspots: usize,
    pub hotspot_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub n_uavs: usize,
    /// Start positions; UAV `i` starts at `(i, 0)` when absent.
    pub initial_positions: Option<Vec<GridPos>>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_uavs: 5,
            initial_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub d_p: f64,
    pub f_penalty: f64,
    pub ducm2_form: Ducm2RewardForm,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            d_p: 0.25,
            f_penalty: 2.0,
            ducm2_form: Ducm2RewardForm::GlobalAverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub n_episodes: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_update_every: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    /// Greedy evaluation period in episodes (0 disables).
    pub eval_every: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            n_episodes: 1000,
            epsilon: 0.1,
            gamma: 0.95,
            batch_size: 512,
            replay_capacity: 100_000,
            target_update_every: 10,
            clip_norm: 1.0,
            optimizer: OptimizerKind::Adam,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ducm1Section {
    pub level: u8,
    pub steps_per_episode: usize,
    pub lr: f64,
    /// Hidden widths; 2x400 for levels 1-3 and 3x256 for level 4 when absent.
    pub hidden: Option<Vec<usize>>,
    /// On by default only when the user layout changes over time.
    pub include_time_state: Option<bool>,
    /// Step size of the tabular Q-learning baseline.
    pub tabular_lr: f64,
}

impl Default for Ducm1Section {
    fn default() -> Self {
        Ducm1Section {
            level: 3,
            steps_per_episode: 100,
            lr: 2.5e-4,
            hidden: None,
            include_time_state: None,
            tabular_lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Copy2Layout {
    /// Copy 2 serves the same users as copy 1.
    #[default]
    Same,
    /// Copy 2 draws its own users from the same hotspot parameters.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ducm2Section {
    pub steps_per_episode: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Steps between quits; `2 (M - 1)` when absent.
    pub quit_interval: Option<usize>,
    /// Where a joining UAV appears during evaluation.
    pub entry_position: GridPos,
    pub copy2_layout: Copy2Layout,
}

impl Default for Ducm2Section {
    fn default() -> Self {
        Ducm2Section {
            steps_per_episode: 150,
            lr: 3.5e-4,
            hidden: vec![400, 400, 400],
            quit_interval: None,
            entry_position: GridPos::new(0, 0),
            copy2_layout: Copy2Layout::Same,
        }
    }
}

/// Which trainer a configuration is resolved for; horizon-dependent
/// defaults differ between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ducm1,
    Ducm2,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Relative layout paths are taken relative to the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.users.layout_file, &mut self.users.schedule_file]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            m: self.grid.m,
            cell_len: self.grid.cell_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.grid().validate()?;
        self.channel.validate()?;
        if self.fleet.n_uavs == 0 {
            return bad("fleet needs at least one UAV".into());
        }
        if self.fleet.n_uavs > 30 {
            return bad("live codes support at most 30 UAVs".into());
        }
        if let Some(init) = &self.fleet.initial_positions {
            if init.len() != self.fleet.n_uavs {
                return bad(format!(
                    "{} initial positions for {} UAVs",
                    init.len(),
                    self.fleet.n_uavs
                ));
            }
            if let Some(p) = init.iter().find(|p| !self.grid().contains(**p)) {
                return bad(format!("initial position {p:?} is off the grid"));
            }
        } else if self.fleet.n_uavs > self.grid.m {
            return bad("default initial positions need n_uavs <= M".into());
        }
        if !(1..=4).contains(&self.ducm1.level) {
            return bad(format!("level must be 1..=4, got {}", self.ducm1.level));
        }
        let l = &self.learning;
        if !(0.0..=1.0).contains(&l.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", l.epsilon));
        }
        if !(0.0..=1.0).contains(&l.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", l.gamma));
        }
        if l.batch_size == 0 || l.replay_capacity < l.batch_size {
            return bad("need 0 < batch_size <= replay_capacity".into());
        }
        if l.target_update_every == 0 {
            return bad("target_update_every must be positive".into());
        }
        if !(l.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative".into());
        }
        for (name, lr) in [
            ("ducm1.lr", self.ducm1.lr),
            ("ducm2.lr", self.ducm2.lr),
            ("ducm1.tabular_lr", self.ducm1.tabular_lr),
        ] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.ducm1.steps_per_episode == 0 || self.ducm2.steps_per_episode == 0 {
            return bad("steps_per_episode must be positive".into());
        }
        if self.ducm1.hidden.as_ref().is_some_and(|h| h.contains(&0)) || self.ducm2.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !self.grid().contains(self.ducm2.entry_position) {
            return bad("entry position is off the grid".into());
        }
        if self.ducm2.quit_interval == Some(0) {
            return bad("quit_interval must be positive".into());
        }
        if !(self.reward.d_p > 0.0) {
            return bad("d_p must be positive".into());
        }
        Ok(())
    }

    pub fn initial_positions(&self) -> Vec<GridPos> {
        self.fleet
            .initial_positions
            .clone()
            .unwrap_or_else(|| (0..self.fleet.n_uavs).map(|i| GridPos::new(i, 0)).collect())
    }

    pub fn steps(&self, alg: Algorithm) -> usize {
        match alg {
            Algorithm::Ducm1 => self.ducm1.steps_per_episode,
            Algorithm::Ducm2 => self.ducm2.steps_per_episode,
        }
    }

    pub fn quit_interval(&self) -> usize {
        self.ducm2
            .quit_interval
            .unwrap_or(2 * (self.grid.m - 1))
    }

    pub fn ducm1_hidden(&self) -> Vec<usize> {
        self.ducm1.hidden.clone().unwrap_or_else(|| {
            if self.ducm1.level == 4 {
                vec![256, 256, 256]
            } else {
                vec![400, 400]
            }
        })
    }

    pub fn dqn_params(&self, alg: Algorithm) -> DqnParams {
        let l = &self.learning;
        let (hidden, lr) = match alg {
            Algorithm::Ducm1 => (self.ducm1_hidden(), self.ducm1.lr),
            Algorithm::Ducm2 => (self.ducm2.hidden.clone(), self.ducm2.lr),
        };
        DqnParams {
            hidden,
            lr,
            gamma: l.gamma,
            epsilon: l.epsilon,
            batch_size: l.batch_size,
            replay_capacity: l.replay_capacity,
            target_update_every: l.target_update_every,
            clip_norm: l.clip_norm,
            optimizer: l.optimizer,
        }
    }

    pub fn layout_seed(&self) -> u64 {
        self.users
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, "users", 0))
    }

    fn hotspot_spec(&self, seed: u64) -> HotspotSpec {
        HotspotSpec {
            n_hotspots: self.users.n_hotspots,
            hotspot_radius: self.users.hotspot_radius,
            p_hot: self.users.p_hot,
            n_users: self.users.n_users,
            seed,
        }
    }

    /// User layout for a given layout seed and horizon.
    pub fn build_layout(&self, seed: u64, steps: usize) -> Result<UserLayout> {
        let grid = self.grid();
        let layout = if let Some(path) = &self.users.schedule_file {
            read_schedule_manifest(path)?
        } else if let Some(path) = &self.users.layout_file {
            UserLayout::stationary(read_users_csv(path)?)
        } else {
            let first = generate_users(&self.hotspot_spec(seed), &grid)?;
            match &self.users.dynamic {
                None => UserLayout::stationary(first),
                Some(d) => {
                    let second = HotspotSpec {
                        n_hotspots: d.n_hotspots,
                        hotspot_radius: d.hotspot_radius,
                        p_hot: d.p_hot,
                        n_users: self.users.n_users,
                        seed: derive_seed(seed, "users-second-epoch", 0),
                    };
                    let t_start = d.t_start.unwrap_or(steps / 2).max(1);
                    UserLayout::scheduled(vec![
                        LayoutEpoch {
                            t_start: 0,
                            users: first,
                        },
                        LayoutEpoch {
                            t_start,
                            users: generate_users(&second, &grid)?,
                        },
                    ])?
                }
            }
        };
        layout.validate(&grid)?;
        Ok(layout)
    }

    pub fn scenario(&self, alg: Algorithm) -> Result<Scenario> {
        self.validate()?;
        Ok(Scenario {
            grid: self.grid(),
            channel: self.channel.clone(),
            users: self.build_layout(self.layout_seed(), self.steps(alg))?,
        })
    }

    /// User layout of the second environment copy.
    pub fn copy2_scenario(&self) -> Result<Scenario> {
        match self.ducm2.copy2_layout {
            Copy2Layout::Same => self.scenario(Algorithm::Ducm2),
            Copy2Layout::Independent => Ok(Scenario {
                grid: self.grid(),
                channel: self.channel.clone(),
                users: self.build_layout(
                    derive_seed(self.layout_seed(), "copy2", 0),
                    self.steps(Algorithm::Ducm2),
                )?,
            }),
        }
    }
}
