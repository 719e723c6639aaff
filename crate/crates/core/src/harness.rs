//! Experiments: configuration, paired planner-only / safeguarded runs,
//! metric aggregation and output files.
//!
//! An experiment runs every `(seed, episode)` pair of its config. Pairs are
//! independent and run in parallel; results are always reported in
//! `(seed, episode)` order so output files do not depend on scheduling.
//!
//! Files written under the output directory:
//!
//! | file               | content                                        |
//! |--------------------|------------------------------------------------|
//! | `episodes.csv`     | one row per episode                            |
//! | `summary.json`     | means, population std devs, hallucination audit |
//! | `trajectory.jsonl` | one record per (step, drone), when enabled     |

use crate::episode::{self, EpisodeOptions, EpisodeResult, Mode, TrajectoryRecord};
use crate::llm_client::{EndpointConfig, LlmError, LlmPlanner};
use crate::planner::{FaultConfig, InjectedFault, MockPlanner, Planner};
use crate::rl::train::{train, TrainingLog, MA_WINDOW};
use crate::rl::{Agent, RlConfig, RlError};
use crate::safety::{audit, ConstraintConfig, Fallback, FaultClass, HallucinationCounts, HallucinationStats, Shield};
use crate::world::{World, WorldConfig, WorldError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {msg}")]
    Output { path: PathBuf, msg: String },
    #[error("summary of an empty list")]
    EmptyInput,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Mock,
    Llm,
}

/// Top-level experiment file (TOML). Every field is optional; omitted
/// fields take the defaults below. Unknown keys are rejected.
///
/// ```toml
/// schema_version = 1
/// mode = "safeguarded"        # or "planner_only"
/// planner = "mock"            # or "llm"
/// episodes = 10               # per seed
/// seeds = [0, 1, 2]
/// output_dir = "out"
/// memory_window = 16          # planner memory records shown to the planner
/// record_trajectory = true
/// # policy_checkpoint = "agent.ckpt"   # learned fallback instead of the ladder
///
/// [world.grid]                # half_extent, warehouse, time_step, max_steps, drone_count
/// [world.spawn]               # customers per sector
/// [world.aircraft]            # rotorcraft parameters
/// [world.battery]             # capacity_kwh, max_charge_per_journey_kwh, charger_power_kw, reserve_fraction
/// [world.reward]              # delivery, distance, battery weights
/// [faults]                    # duplicate_visit, battery_ignore, inefficient_route, sector_imbalance
/// [constraints]               # battery_reserve, route_slack, sector_tolerance, [constraints.enabled]
/// [rl]                        # gamma, eta, learning rates, batch_size, ...
/// [llm]                       # base_url, model names, api_key_env_var_name, timeout, max_retries, ...
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub planner: PlannerKind,
    pub episodes: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub memory_window: usize,
    pub record_trajectory: bool,
    pub policy_checkpoint: Option<PathBuf>,
    pub world: WorldConfig,
    pub faults: FaultConfig,
    pub constraints: ConstraintConfig,
    pub rl: RlConfig,
    pub llm: EndpointConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Safeguarded,
            planner: PlannerKind::Mock,
            episodes: 10,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            memory_window: 16,
            record_trajectory: true,
            policy_checkpoint: None,
            world: WorldConfig::default(),
            faults: FaultConfig::default(),
            constraints: ConstraintConfig::default(),
            rl: RlConfig::default(),
            llm: EndpointConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|msg| HarnessError::Config {
            path: origin.to_string(),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        self.world.validate().map_err(|e| e.to_string())?;
        self.faults.validate()?;
        self.constraints.validate()?;
        self.rl.validate().map_err(|e| e.to_string())?;
        self.llm.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    fn make_planner(&self) -> Result<Box<dyn Planner>, HarnessError> {
        let reserve = self.constraints.battery_reserve;
        Ok(match self.planner {
            PlannerKind::Mock => Box::new(MockPlanner::new(self.faults.clone(), reserve)),
            PlannerKind::Llm => {
                let key = &self.llm.api_key_env_var_name;
                if !key.is_empty() && std::env::var(key).is_err() {
                    return Err(LlmError::MissingApiKey(key.clone()).into());
                }
                Box::new(LlmPlanner::new(self.llm.clone(), reserve)?)
            }
        })
    }
}

/// One `episodes.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: u64,
    pub episode_seed: u64,
    pub layout_hash: String,
    pub steps: u32,
    pub spawned: usize,
    pub served: usize,
    pub success_rate: f64,
    pub battery_mean: f64,
    /// Per-drone consumption fractions, `;`-separated.
    pub battery_per_drone: String,
    pub distance_total: f64,
    pub reward_total: f64,
    pub overrides: u64,
    pub h_duplicate_visit: u64,
    pub h_battery: u64,
    pub h_inefficient_route: u64,
    pub h_sector_imbalance: u64,
    pub h_invalid: u64,
    pub h_parse_failure: u64,
    pub injected: u64,
    pub injected_overridden: u64,
    pub executed_violations: u64,
    pub depleted_drones: usize,
    pub planner_notes: u64,
}

impl EpisodeRow {
    fn new(seed: u64, episode: u64, r: &EpisodeResult) -> Self {
        let h = &r.hallucinations;
        Self {
            seed,
            episode,
            episode_seed: r.episode_seed,
            layout_hash: r.layout_hash.clone(),
            steps: r.steps,
            spawned: r.spawned,
            served: r.served,
            success_rate: r.success_rate,
            battery_mean: r.battery_mean(),
            battery_per_drone: r
                .battery_consumption
                .iter()
                .map(|b| format!("{b:.6}"))
                .collect::<Vec<_>>()
                .join(";"),
            distance_total: r.distance_total,
            reward_total: r.reward_total,
            overrides: r.overrides,
            h_duplicate_visit: h.duplicate_visit,
            h_battery: h.battery,
            h_inefficient_route: h.inefficient_route,
            h_sector_imbalance: h.sector_imbalance,
            h_invalid: h.invalid,
            h_parse_failure: h.parse_failure,
            injected: r.injected.iter().sum(),
            injected_overridden: r.injected_overridden.iter().sum(),
            executed_violations: r.executed_violations,
            depleted_drones: r.depleted_drones,
            planner_notes: r.planner_notes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mode: Mode,
    pub planner: PlannerKind,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: u64,
    pub runs: usize,
    pub success_rate: Stat,
    /// Over every drone of every run.
    pub battery_consumption: Stat,
    pub distance_total: Stat,
    pub reward_total: Stat,
    pub overrides: Stat,
    /// Runs that served every customer.
    pub fully_served_runs: usize,
    pub executed_violations: u64,
    pub hallucinations: HallucinationStats,
    /// Injected faults and how many were overridden, by fault label.
    pub injected: Vec<(String, u64, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub rows: Vec<EpisodeRow>,
    pub results: Vec<EpisodeResult>,
    pub summary: Summary,
}

/// Mean and population standard deviation.
pub fn summarize(xs: &[f64]) -> Result<(f64, f64), HarnessError> {
    if xs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn stat(xs: &[f64]) -> Stat {
    let (mean, std) = summarize(xs).unwrap_or((0.0, 0.0));
    Stat { mean, std }
}

/// Run every `(seed, episode)` of `cfg` without writing files.
pub fn run_episodes(cfg: &ExperimentConfig) -> Result<MetricsBundle, HarnessError> {
    cfg.validate().map_err(|msg| HarnessError::Config {
        path: "<in-memory>".into(),
        msg,
    })?;
    let world = World::new(cfg.world.clone())?;
    let shield = Shield::new(cfg.constraints.clone());
    let agent = match &cfg.policy_checkpoint {
        Some(p) => {
            let f = File::open(p).map_err(|source| HarnessError::Io {
                path: p.clone(),
                source,
            })?;
            Some(Agent::read_checkpoint(cfg.rl.clone(), std::io::BufReader::new(f))?)
        }
        None => None,
    };
    // surface a missing API key or bad template once, before any episode runs
    cfg.make_planner()?;
    let opts = EpisodeOptions {
        memory_window: cfg.memory_window,
        record_trajectory: cfg.record_trajectory,
        assert_sound: false,
    };
    let jobs: Vec<(u64, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..cfg.episodes).map(move |e| (s, e)))
        .collect();
    let results: Vec<Result<EpisodeResult, HarnessError>> = jobs
        .par_iter()
        .map(|&(seed, ep)| {
            let mut planner = cfg.make_planner()?;
            let fallback = match &agent {
                Some(a) => Fallback::Policy(a),
                None => Fallback::Ladder,
            };
            Ok(episode::run_mode(
                &world,
                episode::episode_seed(seed, ep),
                planner.as_mut(),
                &shield,
                cfg.mode,
                fallback,
                opts,
            ))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<EpisodeRow> = jobs
        .iter()
        .zip(&results)
        .map(|(&(s, e), r)| EpisodeRow::new(s, e, r))
        .collect();
    let summary = summarize_runs(cfg, &results);
    Ok(MetricsBundle { rows, results, summary })
}

fn summarize_runs(cfg: &ExperimentConfig, results: &[EpisodeResult]) -> Summary {
    let col = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    let per_drone: Vec<f64> = results.iter().flat_map(|r| r.battery_consumption.iter().copied()).collect();
    let mut counts = HallucinationCounts::default();
    let mut injected = [0u64; 4];
    let mut caught = [0u64; 4];
    for r in results {
        counts.merge(&r.hallucinations);
        for i in 0..4 {
            injected[i] += r.injected[i];
            caught[i] += r.injected_overridden[i];
        }
    }
    Summary {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        planner: cfg.planner,
        seeds: cfg.seeds.clone(),
        episodes_per_seed: cfg.episodes,
        runs: results.len(),
        success_rate: stat(&col(&|r| r.success_rate)),
        battery_consumption: stat(&per_drone),
        distance_total: stat(&col(&|r| r.distance_total)),
        reward_total: stat(&col(&|r| r.reward_total)),
        overrides: stat(&col(&|r| r.overrides as f64)),
        fully_served_runs: results.iter().filter(|r| r.served == r.spawned).count(),
        executed_violations: results.iter().map(|r| r.executed_violations).sum(),
        hallucinations: audit(&counts),
        injected: InjectedFault::ALL
            .iter()
            .enumerate()
            .map(|(i, f)| (f.label().to_string(), injected[i], caught[i]))
            .collect(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Output {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| out_err(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| out_err(path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    for r in rows {
        wr.serialize(r).map_err(|e| out_err(path, e))?;
    }
    wr.flush().map_err(|e| out_err(path, e))
}

/// Trajectory line: the episode's identity plus the per-step record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub seed: u64,
    pub episode: u64,
    #[serde(flatten)]
    pub record: TrajectoryRecord,
}

impl MetricsBundle {
    /// Write `episodes.csv`, `summary.json` and (if recorded)
    /// `trajectory.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        write_rows(&dir.join("episodes.csv"), &self.rows)?;
        write_json(&dir.join("summary.json"), &self.summary)?;
        if self.results.iter().any(|r| !r.trajectory.is_empty()) {
            let path = dir.join("trajectory.jsonl");
            let mut w = create(&path)?;
            for (row, r) in self.rows.iter().zip(&self.results) {
                for rec in &r.trajectory {
                    let line = TrajectoryLine {
                        seed: row.seed,
                        episode: row.episode,
                        record: rec.clone(),
                    };
                    serde_json::to_writer(&mut w, &line).map_err(|e| out_err(&path, e))?;
                    w.write_all(b"\n").map_err(|e| out_err(&path, e))?;
                }
            }
            w.flush().map_err(|e| out_err(&path, e))?;
        }
        Ok(())
    }
}

/// Run `cfg` and write its outputs under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsBundle, HarnessError> {
    let bundle = run_episodes(cfg)?;
    bundle.write(&cfg.output_dir)?;
    Ok(bundle)
}

/// Success rate per `(seed, episode)` rebuilt from trajectory lines and the
/// spawn counts in `rows`.
pub fn success_from_trajectory(rows: &[EpisodeRow], lines: &[TrajectoryLine]) -> Vec<f64> {
    rows.iter()
        .map(|row| {
            let delivered: u64 = lines
                .iter()
                .filter(|l| l.seed == row.seed && l.episode == row.episode)
                .map(|l| u64::from(l.record.delivered))
                .sum();
            if row.spawned == 0 {
                1.0
            } else {
                delivered as f64 / row.spawned as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub episode: u64,
    pub layout_hash: String,
    pub success_planner_only: f64,
    pub success_safeguarded: f64,
    pub battery_planner_only: f64,
    pub battery_safeguarded: f64,
    pub distance_planner_only: f64,
    pub distance_safeguarded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    /// Every pair ran on the same customer layout.
    pub layouts_match: bool,
    pub planner_only: Summary,
    pub safeguarded: Summary,
    pub pairs: Vec<PairedRow>,
}

/// Run both modes over the same seeds. Outputs go to
/// `output_dir/planner_only`, `output_dir/safeguarded` and
/// `output_dir/compare.json`.
pub fn compare(cfg: &ExperimentConfig) -> Result<Comparison, HarnessError> {
    let run = |mode: Mode| -> Result<MetricsBundle, HarnessError> {
        let c = ExperimentConfig {
            mode,
            output_dir: cfg.output_dir.join(mode.label()),
            ..cfg.clone()
        };
        run_experiment(&c)
    };
    let a = run(Mode::PlannerOnly)?;
    let b = run(Mode::Safeguarded)?;
    let pairs: Vec<PairedRow> = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(x, y)| PairedRow {
            seed: x.seed,
            episode: x.episode,
            layout_hash: if x.layout_hash == y.layout_hash {
                x.layout_hash.clone()
            } else {
                format!("MISMATCH {} {}", x.layout_hash, y.layout_hash)
            },
            success_planner_only: x.success_rate,
            success_safeguarded: y.success_rate,
            battery_planner_only: x.battery_mean,
            battery_safeguarded: y.battery_mean,
            distance_planner_only: x.distance_total,
            distance_safeguarded: y.distance_total,
        })
        .collect();
    let out = Comparison {
        schema_version: SCHEMA_VERSION,
        layouts_match: a.rows.iter().zip(&b.rows).all(|(x, y)| x.layout_hash == y.layout_hash),
        planner_only: a.summary,
        safeguarded: b.summary,
        pairs,
    };
    write_json(&cfg.output_dir.join("compare.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub episodes: u64,
    pub halted: bool,
    pub reward_ma_first: f64,
    pub reward_ma_last: f64,
    pub hinge_first_block: f64,
    pub hinge_last_block: f64,
    pub final_lambda: [f64; 4],
}

/// Train an agent on the first seed of `cfg` for `cfg.episodes` episodes.
/// Writes `training.csv`, `agent.ckpt` and `training.json` under
/// `cfg.output_dir`.
pub fn train_experiment(cfg: &ExperimentConfig) -> Result<(Agent, TrainingLog), HarnessError> {
    cfg.validate().map_err(|msg| HarnessError::Config {
        path: "<in-memory>".into(),
        msg,
    })?;
    let world = World::new(cfg.world.clone())?;
    let shield = Shield::new(cfg.constraints.clone());
    let mut planner = cfg.make_planner()?;
    let mut agent = Agent::new(cfg.rl.clone())?;
    let seed = cfg.seeds[0];
    let log = train(&world, planner.as_mut(), &shield, &mut agent, cfg.episodes, seed, cfg.memory_window)?;

    let dir = &cfg.output_dir;
    let path = dir.join("training.csv");
    let w = create(&path)?;
    log.write_csv(w).map_err(|e| out_err(&path, e))?;
    let path = dir.join("agent.ckpt");
    let mut w = create(&path)?;
    agent.write_checkpoint(&mut w)?;
    w.flush().map_err(|e| out_err(&path, e))?;

    let n = log.rows.len();
    let block = (n / 4).max(1);
    let ma = |i: usize| log.rows.get(i).map_or(0.0, |r| r.reward_ma);
    let summary = TrainingSummary {
        seed,
        episodes: n as u64,
        halted: log.halted,
        reward_ma_first: ma(MA_WINDOW.min(n).saturating_sub(1)),
        reward_ma_last: ma(n.saturating_sub(1)),
        hinge_first_block: log.block_mean(0, block, |r| r.hinge_cost),
        hinge_last_block: log.block_mean(n.saturating_sub(block), n, |r| r.hinge_cost),
        final_lambda: agent.lagrange.lambda,
    };
    write_json(&dir.join("training.json"), &summary)?;
    Ok((agent, log))
}

/// Plain-text hallucination table.
pub fn audit_table(stats: &HallucinationStats) -> String {
    let mut s = format!("{:<18} {:>8} {:>8}\n", "class", "count", "share");
    for c in FaultClass::ALL {
        s += &format!("{:<18} {:>8} {:>8.3}\n", c.label(), stats.counts.get(c), stats.share(c));
    }
    s += &format!("{:<18} {:>8}\n", "total", stats.total);
    s
}
