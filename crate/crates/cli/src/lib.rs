//! `ucn` command-line runner.
//!
//! Every subcommand writes plain files (JSON, CSV, SVG) and reports errors
//! on stderr with a nonzero exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ucn_core::ducm1::{Ducm1Trainer, EpisodeReport};
use ucn_core::ducm2::{eval_dynamic, Ducm2Trainer, EventScript};
use ucn_core::gridworld::{read_users_csv, GridSpec};
use ucn_core::harness::plot::metrics_chart;
use ucn_core::harness::suite::{read_suite_csv, run_eval_suite, run_info_levels, suite_report, write_suite_csv, SuiteName};
use ucn_core::harness::{
    load_checkpoint, read_metrics, save_checkpoint, Algorithm, Checkpoint, MetricsWriter, RunConfig, TrainerKind,
};
use ucn_core::neural::Mlp;
use ucn_core::oracle::{brute_force_placement_with_budget, DEFAULT_BUDGET};
use ucn_core::radio::ChannelParams;

#[derive(Debug, Parser)]
#[command(name = "ucn", version, about = "UAV user-connectivity training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the fixed-fleet learner at one information-exchange level.
    TrainDucm1 {
        #[arg(long)]
        level: Option<u8>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the dynamic-fleet learner.
    TrainDucm2 {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Greedy rollout of a checkpoint, optionally under an event script.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Use the last policies instead of the best evaluated ones.
        #[arg(long)]
        last: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive optimal placement of `k` UAVs.
    Oracle {
        #[arg(long)]
        k: usize,
        /// Grid side M; ignored with --config.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, default_value_t = 100.0)]
        cell: f64,
        /// User CSV with columns `user_id,x_m,y_m`.
        #[arg(long)]
        users: Option<PathBuf>,
        /// Take grid, users and channel from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u128,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment battery.
    Suite {
        name: SuiteName,
        /// Trained dynamic-fleet checkpoint (all suites but info-levels).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run config for info-levels.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "UCN_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 3)]
        starts: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u128,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
        #[arg(long)]
        last: bool,
        #[arg(long, default_value = "suite-out")]
        out: PathBuf,
    },
    /// Render episode metrics as an SVG line chart.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// Summarize a suite CSV written earlier.
    Report {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "UCN_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    /// Also keep a numbered checkpoint every K episodes.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Continue from a checkpoint; the effective config must match it.
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainDucm1 { level, train } => train_ducm1(level, &train),
        Command::TrainDucm2 { train } => train_ducm2(&train),
        Command::Eval {
            checkpoint,
            script,
            last,
            out,
        } => eval(&checkpoint, script.as_deref(), last, out.as_deref()),
        Command::Oracle {
            k,
            grid,
            cell,
            users,
            config,
            budget,
            out,
        } => oracle(k, grid, cell, users.as_deref(), config.as_deref(), budget, out.as_deref()),
        Command::Suite {
            name,
            checkpoint,
            config,
            seed,
            starts,
            budget,
            tolerance,
            last,
            out,
        } => suite(name, checkpoint.as_deref(), config.as_deref(), seed, starts, budget, tolerance, last, &out),
        Command::Plot { metrics, out, title } => {
            let rows = read_metrics(&metrics)?;
            let title = title.unwrap_or_else(|| metrics.display().to_string());
            fs::write(&out, metrics_chart(&rows, &title)).with_context(|| format!("writing {}", out.display()))
        }
        Command::Report { suite, tolerance } => {
            let rows = read_suite_csv(&suite)?;
            print!("{}", suite_report(&rows, tolerance).table());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

/// Effective config: the file (or the checkpoint's own config when
/// resuming without one) plus command-line overrides.
fn train_config(args: &TrainArgs, resume: Option<&Checkpoint>) -> Result<RunConfig> {
    let mut cfg = match (&args.config, resume) {
        (None, Some(c)) => c.config.clone(),
        (p, _) => load_config(p.as_deref())?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.episodes {
        cfg.learning.n_episodes = n;
    }
    Ok(cfg)
}

/// Metrics file for this run. On resume, rows past the checkpoint are
/// dropped so the continued file matches an uninterrupted run.
fn metrics_writer(out: &Path, resumed_at: Option<usize>) -> Result<MetricsWriter> {
    let path = out.join("metrics.csv");
    let keep = match resumed_at {
        Some(ep) if path.exists() => read_metrics(&path)?
            .into_iter()
            .filter(|r| r.episode <= ep)
            .collect(),
        _ => Vec::new(),
    };
    let mut w = MetricsWriter::create(&path)?;
    for r in &keep {
        w.write(r)?;
    }
    Ok(w)
}

struct Saver<'a> {
    out: &'a Path,
    every: usize,
}

impl Saver<'_> {
    fn episode(&self, ckpt: impl FnOnce() -> Checkpoint, episode: usize) -> ucn_core::Result<()> {
        if self.every > 0 && episode.is_multiple_of(self.every) {
            let c = ckpt();
            save_checkpoint(&self.out.join(format!("checkpoint-{episode:06}.json")), &c)?;
            save_checkpoint(&self.out.join("checkpoint.json"), &c)?;
        }
        Ok(())
    }
}

fn progress(r: &EpisodeReport) {
    if let Some(g) = r.greedy_final {
        eprintln!(
            "episode {} accumulated {} greedy {}",
            r.row.episode, r.row.accumulated_connected, g
        );
    }
}

fn prepare(args: &TrainArgs) -> Result<Option<Checkpoint>> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    args.resume
        .as_deref()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()
}

fn train_ducm1(level: Option<u8>, args: &TrainArgs) -> Result<()> {
    let resume = prepare(args)?;
    let mut cfg = train_config(args, resume.as_ref())?;
    if let Some(l) = level {
        cfg.ducm1.level = l;
    }
    cfg.validate()?;
    let resumed_at = resume.as_ref().map(|c| c.episode);
    let mut trainer = match resume {
        Some(c) => Ducm1Trainer::from_checkpoint(cfg.clone(), c)?,
        None => Ducm1Trainer::new(cfg.clone())?,
    };
    cfg.save(&args.out.join("config.json"))?;
    let mut metrics = metrics_writer(&args.out, resumed_at)?;
    let saver = Saver {
        out: &args.out,
        every: args.checkpoint_every,
    };
    trainer.train(|t, r| {
        metrics.write(&r.row)?;
        progress(r);
        saver.episode(|| t.checkpoint(), r.row.episode)
    })?;
    save_checkpoint(&args.out.join("checkpoint.json"), &trainer.checkpoint())?;
    if let Some(b) = trainer.best() {
        eprintln!("best greedy connectivity {} at episode {}", b.connected, b.episode);
    }
    Ok(())
}

fn train_ducm2(args: &TrainArgs) -> Result<()> {
    let resume = prepare(args)?;
    let cfg = train_config(args, resume.as_ref())?;
    cfg.validate()?;
    let resumed_at = resume.as_ref().map(|c| c.episode);
    let mut trainer = match resume {
        Some(c) => Ducm2Trainer::from_checkpoint(cfg.clone(), c)?,
        None => Ducm2Trainer::new(cfg.clone())?,
    };
    cfg.save(&args.out.join("config.json"))?;
    let mut metrics = metrics_writer(&args.out, resumed_at)?;
    let saver = Saver {
        out: &args.out,
        every: args.checkpoint_every,
    };
    trainer.train(|t, r| {
        metrics.write(&r.row)?;
        progress(r);
        saver.episode(|| t.checkpoint(), r.row.episode)
    })?;
    save_checkpoint(&args.out.join("checkpoint.json"), &trainer.checkpoint())?;
    if let Some(b) = trainer.best() {
        eprintln!("best greedy connectivity {} at episode {}", b.connected, b.episode);
    }
    Ok(())
}

fn pick_policies(ckpt: &Checkpoint, last: bool) -> Vec<Mlp> {
    match (&ckpt.best, last) {
        (Some(b), false) => b.policies.clone(),
        _ => ckpt.policies(),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            writeln!(so, "{text}")?;
            Ok(())
        }
    }
}

fn eval(checkpoint: &Path, script: Option<&Path>, last: bool, out: Option<&Path>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let policies = pick_policies(&ckpt, last);
    let cfg = ckpt.config.clone();
    let json = match ckpt.trainer {
        TrainerKind::Ducm1 => {
            if script.is_some() {
                bail!("event scripts need a dynamic-fleet checkpoint");
            }
            let trainer = Ducm1Trainer::from_checkpoint(cfg, ckpt)?;
            let init = trainer.config().initial_positions.clone();
            serde_json::to_string_pretty(&trainer.greedy_rollout(&policies, &init)?)?
        }
        TrainerKind::Ducm2 => {
            let script = match script {
                Some(p) => EventScript::load(p)?,
                None => EventScript {
                    initial_active: None,
                    events: Vec::new(),
                },
            };
            let scenario = cfg.scenario(Algorithm::Ducm2)?;
            let res = eval_dynamic(
                &policies,
                &scenario,
                cfg.ducm2.steps_per_episode,
                &cfg.initial_positions(),
                cfg.ducm2.entry_position,
                &script,
            )?;
            serde_json::to_string_pretty(&res)?
        }
    };
    emit(out, &json)
}

fn oracle(
    k: usize,
    grid: Option<usize>,
    cell: f64,
    users: Option<&Path>,
    config: Option<&Path>,
    budget: u128,
    out: Option<&Path>,
) -> Result<()> {
    let (grid, users, channel) = match (config, grid, users) {
        (Some(c), _, _) => {
            let cfg = load_config(Some(c))?;
            let sc = cfg.scenario(Algorithm::Ducm1)?;
            let u = sc.users_at(0).to_vec();
            (sc.grid, u, sc.channel)
        }
        (None, Some(m), Some(u)) => (GridSpec::new(m, cell)?, read_users_csv(u)?, ChannelParams::default()),
        _ => bail!("oracle needs --config, or both --grid and --users"),
    };
    let res = brute_force_placement_with_budget(k, &grid, &users, &channel, budget)?;
    emit(out, &serde_json::to_string_pretty(&res)?)
}

#[allow(clippy::too_many_arguments)]
fn suite(
    name: SuiteName,
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
    starts: usize,
    budget: u128,
    tolerance: f64,
    last: bool,
    out: &Path,
) -> Result<()> {
    let rows = if name == SuiteName::InfoLevels {
        let mut cfg = load_config(config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        run_info_levels(&cfg, budget)?
    } else {
        let Some(path) = checkpoint else {
            bail!("suite {} needs --checkpoint", name.as_str());
        };
        let ckpt = load_checkpoint(path)?;
        if ckpt.trainer != TrainerKind::Ducm2 {
            bail!("suite {} needs a dynamic-fleet checkpoint", name.as_str());
        }
        let mut cfg = ckpt.config.clone();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        run_eval_suite(name, &pick_policies(&ckpt, last), &cfg, starts, budget)?
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_suite_csv(&out.join("suite.csv"), &rows)?;
    let report = suite_report(&rows, tolerance);
    report.write_csv(&out.join("report.csv"))?;
    print!("{}", report.table());
    Ok(())
}
