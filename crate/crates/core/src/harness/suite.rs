//! Evaluation batteries over quit/join scripts and start positions, and
//! their summary against the brute-force oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::{index::sample, IndexedRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, RunConfig};
use crate::ducm1::{self, greedy_rollout};
use crate::ducm2::{eval_dynamic, permutations, Event, EventKind, EventScript};
use crate::error::{Error, Result};
use crate::gridworld::GridPos;
use crate::neural::Mlp;
use crate::oracle::brute_force_placement_with_budget;
use crate::rng::stream;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    /// Every quit order of the full fleet.
    QuitsExhaustive,
    /// Seeded quit/join scripts whose active count moves by one per event.
    MixedRandom,
    /// Every join order, starting from a single UAV.
    JoinIn,
    /// Full fleet from random start positions.
    RandomStarts,
    /// Fixed-fleet training at every information-exchange level.
    InfoLevels,
}

impl SuiteName {
    pub const ALL: [SuiteName; 5] = [
        SuiteName::QuitsExhaustive,
        SuiteName::MixedRandom,
        SuiteName::JoinIn,
        SuiteName::RandomStarts,
        SuiteName::InfoLevels,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteName::QuitsExhaustive => "quits-exhaustive",
            SuiteName::MixedRandom => "mixed-random",
            SuiteName::JoinIn => "join-in",
            SuiteName::RandomStarts => "random-starts",
            SuiteName::InfoLevels => "info-levels",
        }
    }
}

impl FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = SuiteName::ALL.iter().map(|n| n.as_str()).collect();
                Error::InvalidConfig(format!("unknown suite {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// One evaluated phase of one script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub script_id: String,
    pub phase: usize,
    pub active_count: usize,
    pub connected: usize,
    /// Empty when the oracle was over budget.
    pub oracle: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
}

/// A named event script with optional start positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub id: String,
    pub script: EventScript,
    pub initial: Option<Vec<GridPos>>,
}

fn ids(order: &[usize]) -> String {
    order.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
}

/// Every ±1 walk of `len` steps from `start` that stays in `[1, n_max]`.
pub fn count_paths(n_max: usize, start: usize, len: usize) -> Vec<Vec<i8>> {
    let mut out = Vec::new();
    for mask in 0..(1u32 << len) {
        let steps: Vec<i8> = (0..len).map(|k| if mask >> (len - 1 - k) & 1 == 1 { 1 } else { -1 }).collect();
        let mut c = start as i64;
        let ok = steps.iter().all(|&d| {
            c += i64::from(d);
            (1..=n_max as i64).contains(&c)
        });
        if ok {
            out.push(steps);
        }
    }
    out
}

/// Scripts of an evaluation suite. `info-levels` has none.
pub fn suite_cases(name: SuiteName, n_max: usize, m: usize, interval: usize, seed: u64, n_starts: usize) -> Vec<SuiteCase> {
    match name {
        SuiteName::QuitsExhaustive => permutations(n_max)
            .into_iter()
            .map(|p| SuiteCase {
                id: format!("quit-{}", ids(&p[..n_max - 1])),
                script: EventScript::quits(&p[..n_max - 1], interval),
                initial: None,
            })
            .collect(),
        SuiteName::JoinIn => permutations(n_max)
            .into_iter()
            .map(|p| SuiteCase {
                id: format!("join-{}", ids(&p)),
                script: EventScript::joins(&p, interval),
                initial: None,
            })
            .collect(),
        SuiteName::MixedRandom => {
            let start = n_max.div_ceil(2);
            count_paths(n_max, start, n_max - 1)
                .into_iter()
                .enumerate()
                .map(|(k, path)| {
                    let mut rng = stream(seed, "mixed-random", k as u64);
                    let mut active: Vec<usize> = sample(&mut rng, n_max, start).into_vec();
                    active.sort_unstable();
                    let initial_active = active.clone();
                    let mut events = Vec::new();
                    for (j, &d) in path.iter().enumerate() {
                        let (event, uav) = if d < 0 {
                            let uav = *active.choose(&mut rng).expect("count stays >= 1");
                            active.retain(|&u| u != uav);
                            (EventKind::Quit, uav)
                        } else {
                            let idle: Vec<usize> = (0..n_max).filter(|u| !active.contains(u)).collect();
                            let uav = *idle.choose(&mut rng).expect("count stays <= n_max");
                            active.push(uav);
                            (EventKind::Join, uav)
                        };
                        events.push(Event {
                            t: (j + 1) * interval,
                            event,
                            uav,
                            x: None,
                            y: None,
                        });
                    }
                    let shape: String = path.iter().map(|&d| if d > 0 { '+' } else { '-' }).collect();
                    SuiteCase {
                        id: format!("mixed-{k:02}{shape}"),
                        script: EventScript {
                            initial_active: Some(initial_active),
                            events,
                        },
                        initial: None,
                    }
                })
                .collect()
        }
        SuiteName::RandomStarts => (0..n_starts)
            .map(|k| {
                let mut rng = stream(seed, "random-starts", k as u64);
                let cells = sample(&mut rng, m * m, n_max);
                SuiteCase {
                    id: format!("start-{k}"),
                    script: EventScript {
                        initial_active: None,
                        events: Vec::new(),
                    },
                    initial: Some(cells.iter().map(|c| GridPos::new(c / m, c % m)).collect()),
                }
            })
            .collect(),
        SuiteName::InfoLevels => Vec::new(),
    }
}

/// Memoized oracle values per UAV count and layout epoch.
pub struct OracleCache<'a> {
    scenario: &'a Scenario,
    budget: u128,
    values: Mutex<HashMap<(usize, usize), Option<usize>>>,
}

impl<'a> OracleCache<'a> {
    pub fn new(scenario: &'a Scenario, budget: u128) -> Self {
        OracleCache {
            scenario,
            budget,
            values: Mutex::new(HashMap::new()),
        }
    }

    /// Best single-step connectivity of `k` UAVs against the users active
    /// at step `t`; `None` when the search exceeds the budget.
    pub fn get(&self, k: usize, t: usize) -> Result<Option<usize>> {
        let epoch = self
            .scenario
            .users
            .epochs()
            .iter()
            .rposition(|e| e.t_start <= t)
            .unwrap_or(0);
        if let Some(v) = self.values.lock().expect("oracle cache lock").get(&(k, epoch)) {
            return Ok(*v);
        }
        let s = self.scenario;
        let v = match brute_force_placement_with_budget(k, &s.grid, s.users_at(t), &s.channel, self.budget) {
            Ok(r) => Some(r.best_connected),
            Err(Error::BudgetExceeded { .. }) => None,
            Err(e) => return Err(e),
        };
        self.values.lock().expect("oracle cache lock").insert((k, epoch), v);
        Ok(v)
    }
}

/// Runs the dynamic-fleet scripts of a suite against fixed policies.
pub fn run_eval_suite(
    name: SuiteName,
    policies: &[Mlp],
    run: &RunConfig,
    n_starts: usize,
    oracle_budget: u128,
) -> Result<Vec<SuiteRow>> {
    let scenario = run.scenario(Algorithm::Ducm2)?;
    let cases = suite_cases(
        name,
        run.fleet.n_uavs,
        run.grid.m,
        run.quit_interval(),
        run.seed,
        n_starts,
    );
    let oracle = OracleCache::new(&scenario, oracle_budget);
    let hash = run.hash();
    let steps = run.ducm2.steps_per_episode;
    let default_init = run.initial_positions();
    let per_case: Vec<Vec<SuiteRow>> = cases
        .par_iter()
        .map(|case| {
            let init = case.initial.as_deref().unwrap_or(&default_init);
            let eval = eval_dynamic(policies, &scenario, steps, init, run.ducm2.entry_position, &case.script)?;
            eval.phases
                .iter()
                .map(|p| {
                    Ok(SuiteRow {
                        script_id: case.id.clone(),
                        phase: p.phase,
                        active_count: p.active_count,
                        connected: p.connected,
                        oracle: oracle.get(p.active_count, p.t)?,
                        seed: run.seed,
                        config_hash: hash.clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Trains the fixed-fleet learner at each level and reports the final
/// greedy connectivity of the best periodic evaluation (or of the final
/// policies when evaluation is off).
pub fn run_info_levels(run: &RunConfig, oracle_budget: u128) -> Result<Vec<SuiteRow>> {
    let rows = (1..=4u8)
        .into_par_iter()
        .map(|level| {
            let mut cfg = run.clone();
            cfg.ducm1.level = level;
            let out = ducm1::train(&cfg)?;
            let scenario = cfg.scenario(Algorithm::Ducm1)?;
            let resolved = ducm1::Ducm1Config::resolve(&cfg, &scenario)?;
            let connected = match &out.best {
                Some(b) => b.connected,
                None => greedy_rollout(
                    &out.policies,
                    &scenario,
                    &resolved.state_spec(scenario.grid.m),
                    &resolved.initial_positions,
                    resolved.steps_per_episode,
                )?
                .final_connected(),
            };
            let steps = resolved.steps_per_episode;
            let oracle = OracleCache::new(&scenario, oracle_budget).get(cfg.fleet.n_uavs, steps)?;
            Ok(SuiteRow {
                script_id: format!("level-{level}"),
                phase: 0,
                active_count: cfg.fleet.n_uavs,
                connected,
                oracle,
                seed: cfg.seed,
                config_hash: cfg.hash(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

pub fn write_suite_csv(path: &Path, rows: &[SuiteRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_suite_csv(path: &Path) -> Result<Vec<SuiteRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub active_count: usize,
    pub cases: usize,
    pub oracle: Option<usize>,
    /// Share of cases per achieved connectivity value.
    pub histogram: BTreeMap<usize, f64>,
    /// Share of cases with `connected >= (1 - tolerance) * oracle`.
    pub within: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub buckets: Vec<Bucket>,
    /// Over every case that has an oracle value.
    pub within: Option<f64>,
}

pub fn within_tolerance(connected: usize, oracle: usize, tolerance: f64) -> bool {
    connected as f64 >= (1.0 - tolerance) * oracle as f64
}

/// Groups results by active UAV count.
pub fn suite_report(rows: &[SuiteRow], tolerance: f64) -> SuiteReport {
    let mut groups: BTreeMap<usize, Vec<&SuiteRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.active_count).or_default().push(r);
    }
    let (mut hits, mut judged) = (0usize, 0usize);
    let buckets = groups
        .into_iter()
        .map(|(active_count, rs)| {
            let n = rs.len() as f64;
            let mut histogram = BTreeMap::new();
            for r in &rs {
                *histogram.entry(r.connected).or_insert(0.0) += 1.0 / n;
            }
            let with_oracle: Vec<_> = rs.iter().filter_map(|r| r.oracle.map(|o| (r.connected, o))).collect();
            let h = with_oracle.iter().filter(|(c, o)| within_tolerance(*c, *o, tolerance)).count();
            hits += h;
            judged += with_oracle.len();
            Bucket {
                active_count,
                cases: rs.len(),
                oracle: rs.iter().filter_map(|r| r.oracle).max(),
                histogram,
                within: (!with_oracle.is_empty()).then(|| h as f64 / with_oracle.len() as f64),
            }
        })
        .collect();
    SuiteReport {
        tolerance,
        buckets,
        within: (judged > 0).then(|| hits as f64 / judged as f64),
    }
}

impl SuiteReport {
    /// `active_count,connected,fraction,oracle,within` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["active_count", "connected", "fraction", "oracle", "within"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for b in &self.buckets {
            for (c, f) in &b.histogram {
                w.write_record([
                    b.active_count.to_string(),
                    c.to_string(),
                    f.to_string(),
                    opt(b.oracle.map(|o| o.to_string())),
                    opt(b.within.map(|x| x.to_string())),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
        writeln!(s, "active  cases  oracle  within {:.0}%  histogram (connected: share)", 100.0 * self.tolerance).unwrap();
        for b in &self.buckets {
            let hist: Vec<String> = b.histogram.iter().map(|(c, f)| format!("{c}: {:.2}", f)).collect();
            writeln!(
                s,
                "{:>6}  {:>5}  {:>6}  {:>10}  {}",
                b.active_count,
                b.cases,
                b.oracle.map_or("n/a".into(), |o| o.to_string()),
                pct(b.within),
                hist.join(", ")
            )
            .unwrap();
        }
        writeln!(s, "overall within: {}", pct(self.within)).unwrap();
        s
    }
}
