//! Command-line front end: configuration resolution, evaluation matrices,
//! benchmark generation, RL training and rendering. Every run writes a
//! manifest next to its outputs.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then
//! explicit flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::causality::{augment_scenario, generate_goals, ActionCostTable, CausalityError};
use crate::controller::MpcConfig;
use crate::dynamics::VehicleParams;
use crate::env::{batch_simulate, BatchConfig, DynamicsModel, EnvConfig, EnvError, EpisodeResult, Observer};
use crate::episode_log::{load_episode_log, save_episode_log, LogError, LOG_EXTENSION};
use crate::format::{load_scenario, save_scenario, scenario_files, FormatError, SCENARIO_EXTENSION};
use crate::metrics::{MetricsReport, RewardWeights, TerminalClass};
use crate::policies::{BuiltinFactory, IdmParams, LaneFollowConfig, NpcPolicy, PlannerFactory, SdcPolicy};
use crate::render::{render_episode, RenderError, RenderOptions};
use crate::rl::agent::{train_driving, RlPolicy, TrainError};
use crate::rl::checkpoint::{self, CheckpointError};
use crate::rl::features::{FeatureError, FeatureProvider, FusedObserver, NoFeatures, RecordedFeatures};
use crate::rl::sac::SacConfig;
use crate::scenario::Scenario;
use crate::synth::{synth_scenario, SynthError, SynthSpec, Template};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAINING_LOG_FILE: &str = "training.jsonl";
pub const GOALS_FILE: &str = "goals.jsonl";

/// Commit the binary was built from, or "unknown".
pub const GIT_COMMIT: &str = env!("DRIVESIM_GIT_COMMIT");

/// Name of the learned policy loaded from `--checkpoint`.
pub const RL_POLICY: &str = "rl";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: String,
        #[source]
        source: FormatError,
    },
    #[error("no scenarios found in {0}")]
    EmptyScenarioSet(String),
    #[error(transparent)]
    Simulation(EnvError),
    #[error(transparent)]
    Training(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{scenario_id}: {source}")]
    Benchmark {
        scenario_id: String,
        #[source]
        source: CausalityError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl From<EnvError> for HarnessError {
    fn from(e: EnvError) -> Self {
        HarnessError::Simulation(e)
    }
}

impl HarnessError {
    /// Stable machine-readable class.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::Usage(_) => "usage",
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Scenario { .. } => "scenario_format",
            HarnessError::EmptyScenarioSet(_) => "empty_scenario_set",
            HarnessError::Simulation(EnvError::WorkerPanic { .. }) => "worker_panic",
            HarnessError::Simulation(_) => "simulation",
            HarnessError::Training(_) => "training",
            HarnessError::Checkpoint(_) => "checkpoint",
            HarnessError::Features(_) => "features",
            HarnessError::Log(_) => "episode_log",
            HarnessError::Render(_) => "render",
            HarnessError::Benchmark { .. } => "benchmark",
            HarnessError::Synth(_) => "synth",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Config(_) => 3,
            HarnessError::Io { .. } => 4,
            HarnessError::Scenario { .. } => 5,
            HarnessError::EmptyScenarioSet(_) => 6,
            HarnessError::Simulation(EnvError::WorkerPanic { .. }) => 8,
            HarnessError::Simulation(_) => 7,
            HarnessError::Training(_) => 9,
            HarnessError::Checkpoint(_) => 10,
            HarnessError::Features(_) => 11,
            HarnessError::Log(_) => 12,
            HarnessError::Render(_) => 13,
            HarnessError::Benchmark { .. } => 14,
            HarnessError::Synth(_) => 15,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "class": self.class(), "message": self.to_string() } }).to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn comma_list(s: &str) -> Vec<String> {
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Everything a run needs. Policy, dynamics, NPC and MPC entries may list
/// several values; `evaluate` runs their cross product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sdc_policy: OneOrMany<String>,
    pub npc_policy: OneOrMany<String>,
    pub dynamics: OneOrMany<String>,
    pub mpc: OneOrMany<bool>,
    /// Predict once at the start and replay the prediction.
    pub open_loop: bool,
    pub checkpoint: Option<PathBuf>,
    /// Directory of recorded per-step features, or "none".
    pub il_features: String,
    pub workers: usize,
    pub seed: u64,
    pub epochs: usize,
    pub reward_weights: RewardWeights,
    pub vehicle: VehicleParams,
    pub controller: MpcConfig,
    pub idm: IdmParams,
    pub lanefollow: LaneFollowConfig,
    pub causality: ActionCostTable,
    pub sac: SacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario_dir: None,
            out_dir: PathBuf::from("out"),
            sdc_policy: OneOrMany::One("expert".into()),
            npc_policy: OneOrMany::One("expert".into()),
            dynamics: OneOrMany::One("default".into()),
            mpc: OneOrMany::One(true),
            open_loop: false,
            checkpoint: None,
            il_features: "none".into(),
            workers: 1,
            seed: 0,
            epochs: 1,
            reward_weights: RewardWeights::default(),
            vehicle: VehicleParams::default(),
            controller: MpcConfig::default(),
            idm: IdmParams::default(),
            lanefollow: LaneFollowConfig::default(),
            causality: ActionCostTable::default(),
            sac: SacConfig::default(),
        }
    }
}

/// One row of an evaluation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpec {
    pub sdc_policy: String,
    pub dynamics: DynamicsModel,
    pub npc_policy: NpcPolicy,
    pub mpc: bool,
}

impl RunConfig {
    /// Parse a TOML config, or the `config` of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let bad = |e: String| HarnessError::Config(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let cfg = m.get("config").cloned().ok_or_else(|| bad("manifest has no config".into()))?;
            serde_json::from_value(cfg).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    fn apply(&mut self, f: &RunFlags) -> Result<(), HarnessError> {
        if let Some(d) = &f.scenario_dir {
            self.scenario_dir = Some(d.clone());
        }
        if let Some(d) = &f.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(p) = &f.sdc_policy {
            self.sdc_policy = OneOrMany::Many(comma_list(p));
        }
        if let Some(p) = &f.npc_policy {
            self.npc_policy = OneOrMany::Many(comma_list(p));
        }
        if let Some(d) = &f.dynamics {
            self.dynamics = OneOrMany::Many(comma_list(d));
        }
        if let Some(m) = &f.mpc {
            let vals = comma_list(m)
                .iter()
                .map(|v| match v.as_str() {
                    "on" | "true" => Ok(true),
                    "off" | "false" => Ok(false),
                    _ => Err(HarnessError::Usage(format!("--mpc expects on/off, got {v:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            self.mpc = OneOrMany::Many(vals);
        }
        if f.no_mpc {
            self.mpc = OneOrMany::One(false);
        }
        if f.open_loop {
            self.open_loop = true;
        }
        if let Some(c) = &f.checkpoint {
            self.checkpoint = Some(c.clone());
        }
        if let Some(i) = &f.il_features {
            self.il_features = i.clone();
        }
        if let Some(w) = f.workers {
            self.workers = w;
        }
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(e) = f.epochs {
            self.epochs = e;
        }
        if let Some(w) = &f.reward_weights {
            self.reward_weights = RewardWeights::parse(w).map_err(HarnessError::Usage)?;
        }
        Ok(())
    }

    /// Resolve defaults, then the config file, then flags.
    pub fn resolve(flags: &RunFlags) -> Result<Self, HarnessError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(flags)?;
        Ok(cfg)
    }

    pub fn rows(&self) -> Result<Vec<RowSpec>, HarnessError> {
        let cfg_err = |s: String| HarnessError::Config(s);
        let sdc = self.sdc_policy.to_vec();
        let dyns = self
            .dynamics
            .to_vec()
            .iter()
            .map(|d| DynamicsModel::from_name(d).ok_or_else(|| cfg_err(format!("unknown dynamics {d:?} (default, bicycle)"))))
            .collect::<Result<Vec<_>, _>>()?;
        let npcs = self
            .npc_policy
            .to_vec()
            .iter()
            .map(|n| NpcPolicy::from_name(n).ok_or_else(|| cfg_err(format!("unknown NPC policy {n:?} (expert, idm)"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mpcs = self.mpc.to_vec();
        for p in &sdc {
            if p != RL_POLICY && SdcPolicy::from_name(p).is_none() {
                return Err(cfg_err(format!(
                    "unknown SDC policy {p:?} (expert, lanefollow, constvel, {RL_POLICY})"
                )));
            }
        }
        if sdc.is_empty() || dyns.is_empty() || npcs.is_empty() || mpcs.is_empty() {
            return Err(cfg_err("every matrix axis needs at least one value".into()));
        }
        let mut rows = Vec::new();
        for s in &sdc {
            for &d in &dyns {
                for &n in &npcs {
                    for &m in &mpcs {
                        rows.push(RowSpec {
                            sdc_policy: s.clone(),
                            dynamics: d,
                            npc_policy: n,
                            mpc: m,
                        });
                    }
                }
            }
        }
        Ok(rows)
    }

    pub fn env_config(&self, row: &RowSpec) -> EnvConfig {
        EnvConfig {
            dynamics: row.dynamics,
            mpc: row.mpc,
            npc_policy: row.npc_policy,
            vehicle: self.vehicle,
            mpc_config: self.controller,
            idm: self.idm,
            reward_weights: self.reward_weights,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let c = |s: String| HarnessError::Config(s);
        if self.workers == 0 {
            return Err(c("workers must be at least 1".into()));
        }
        self.rows()?;
        self.vehicle.validate().map_err(c)?;
        self.controller.validate().map_err(c)?;
        self.idm.validate().map_err(c)?;
        self.reward_weights.validate().map_err(c)?;
        self.causality.validate().map_err(c)?;
        self.sac.validate().map_err(c)?;
        if let Some(d) = &self.scenario_dir {
            if !d.is_dir() {
                return Err(c(format!("scenario directory {} does not exist", d.display())));
            }
        }
        if let Some(p) = &self.checkpoint {
            if !p.is_file() {
                return Err(c(format!("checkpoint {} does not exist", p.display())));
            }
        }
        if self.il_features != "none" && !Path::new(&self.il_features).is_dir() {
            return Err(c(format!("feature directory {} does not exist", self.il_features)));
        }
        Ok(())
    }

    fn features(&self) -> Result<Box<dyn FeatureProvider>, HarnessError> {
        if self.il_features == "none" {
            Ok(Box::new(NoFeatures))
        } else {
            Ok(Box::new(RecordedFeatures::load_dir(Path::new(&self.il_features))?))
        }
    }

    fn scenario_dir(&self) -> Result<&Path, HarnessError> {
        self.scenario_dir
            .as_deref()
            .ok_or_else(|| HarnessError::Usage("--scenario-dir is required".into()))
    }
}

/// Load every scenario file in `dir`, in file-name order.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>, HarnessError> {
    let files = scenario_files(dir).map_err(|source| HarnessError::Scenario {
        path: dir.display().to_string(),
        source,
    })?;
    if files.is_empty() {
        return Err(HarnessError::EmptyScenarioSet(dir.display().to_string()));
    }
    files
        .iter()
        .map(|p| {
            load_scenario(p).map_err(|source| HarnessError::Scenario {
                path: p.display().to_string(),
                source,
            })
        })
        .collect()
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub sdc_policy: String,
    pub dynamics: DynamicsModel,
    pub npc_policy: NpcPolicy,
    pub mpc: bool,
    pub scenario_id: String,
    pub terminal: TerminalClass,
    pub steps: usize,
    pub total_reward: f64,
    pub final_goal_distance: f64,
    /// Smallest gap to another agent over the episode.
    #[serde(with = "crate::serde_f64")]
    pub min_collision_gap: f64,
    /// Largest signed distance beyond the road edge.
    #[serde(with = "crate::serde_f64")]
    pub max_offroad: f64,
    pub uncomfortable_steps: usize,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn new(row: &RowSpec, ep: &EpisodeResult) -> Self {
        let final_pos = ep.log.last().map_or(ep.initial_ego.position(), |s| s.ego.position());
        Self {
            sdc_policy: row.sdc_policy.clone(),
            dynamics: row.dynamics,
            npc_policy: row.npc_policy,
            mpc: row.mpc,
            scenario_id: ep.scenario_id.clone(),
            terminal: ep.terminal,
            steps: ep.steps,
            total_reward: ep.total_reward,
            final_goal_distance: final_pos.dist(ep.goal),
            min_collision_gap: ep.log.iter().map(|s| s.signals.d_collision).fold(f64::INFINITY, f64::min),
            max_offroad: ep.log.iter().map(|s| s.signals.d_offroad).fold(f64::NEG_INFINITY, f64::max),
            uncomfortable_steps: ep.log.iter().filter(|s| s.uncomfortable).count(),
            error: ep.error.clone(),
        }
    }

    fn row(&self) -> RowSpec {
        RowSpec {
            sdc_policy: self.sdc_policy.clone(),
            dynamics: self.dynamics,
            npc_policy: self.npc_policy,
            mpc: self.mpc,
        }
    }
}

pub fn results_to_string(records: &[ResultRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
        .collect()
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Config(format!("results line {}: {e}", i + 1)))
        })
        .collect()
}

/// Aggregate each matrix row, in first-appearance order.
pub fn aggregate(records: &[ResultRecord]) -> Vec<(RowSpec, MetricsReport)> {
    let mut rows: Vec<(RowSpec, Vec<TerminalClass>)> = Vec::new();
    for r in records {
        let key = r.row();
        match rows.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.terminal),
            None => rows.push((key, vec![r.terminal])),
        }
    }
    rows.into_iter()
        .map(|(k, c)| (k, MetricsReport::from_classes(&c).expect("row has at least one record")))
        .collect()
}

/// Aligned text table with one line per matrix row.
pub fn format_table(rows: &[(RowSpec, MetricsReport)]) -> String {
    let header = ["SDC policy", "Dynamics", "NPC policy", "MPC", "N", "Compl.", "Col.", "Off.", "Stu."];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|(k, m)| {
            [
                k.sdc_policy.clone(),
                k.dynamics.name().to_string(),
                k.npc_policy.name().to_string(),
                if k.mpc { "on" } else { "off" }.to_string(),
                m.scenarios.to_string(),
                format!("{:.3}", m.completion),
                format!("{:.3}", m.collision),
                format!("{:.3}", m.offroad),
                format!("{:.3}", m.stuck),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            // text columns left-aligned, numbers right-aligned
            .map(|(i, (c, w))| if i < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header);
    for r in &body {
        line(&r.each_ref().map(String::as_str));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_commit: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub scenario_count: usize,
    /// FNV-1a over the input scenario ids and files, in load order.
    pub scenario_digest: String,
}

pub fn scenario_digest(scenarios: &[Scenario]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for sc in scenarios {
        for b in crate::format::scenario_to_string(sc).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    args: &[String],
    seed: u64,
    config: serde_json::Value,
    scenarios: &[Scenario],
) -> Result<(), HarnessError> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_commit: GIT_COMMIT.into(),
        command: command.into(),
        args: args.to_vec(),
        seed,
        config,
        scenario_count: scenarios.len(),
        scenario_digest: scenario_digest(scenarios),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(io_err(&path))
}

fn create_dir(p: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(p).map_err(io_err(p))
}

fn write_file(p: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(p, text).map_err(io_err(p))
}

/// Settings shared by the simulation commands.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML config file, or a run manifest to reproduce.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// expert, lanefollow, constvel or rl; comma-separated for a matrix.
    #[arg(long)]
    pub sdc_policy: Option<String>,
    /// expert or idm; comma-separated for a matrix.
    #[arg(long)]
    pub npc_policy: Option<String>,
    /// default or bicycle; comma-separated for a matrix.
    #[arg(long)]
    pub dynamics: Option<String>,
    /// on, off, or on,off.
    #[arg(long)]
    pub mpc: Option<String>,
    /// Apply waypoints without the MPC tracker.
    #[arg(long)]
    pub no_mpc: bool,
    #[arg(long)]
    pub open_loop: bool,
    /// Actor checkpoint for the rl policy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of recorded features, or "none".
    #[arg(long)]
    pub il_features: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Offroad, collision and progress weights as "o,c,p".
    #[arg(long)]
    pub reward_weights: Option<String>,
}

#[derive(Debug, Parser)]
#[command(name = "drivesim", version, about = "Closed-loop driving simulation, benchmark generation and RL training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write results plus per-episode logs.
    Simulate(RunFlags),
    /// Run a policy x dynamics x NPC x MPC matrix and print the metrics table.
    Evaluate {
        #[command(flatten)]
        flags: RunFlags,
        /// Print the table for an existing results file instead of simulating.
        #[arg(long)]
        from_results: Option<PathBuf>,
    },
    /// Write one scenario file per (scenario, goal) pair.
    GenBenchmark(RunFlags),
    /// Train the SAC agent and write a checkpoint.
    TrainRl(RunFlags),
    /// Write one SVG per step of an episode log.
    Render {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Pixels per meter.
        #[arg(long, default_value_t = RenderOptions::default().scale)]
        scale: f64,
    },
    /// Write synthetic scenario files.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Template name, or "all".
        #[arg(long, default_value = "all")]
        template: String,
        /// NPCs per scenario; defaults per template.
        #[arg(long)]
        npcs: Option<usize>,
        /// Scenarios per template.
        #[arg(long, default_value_t = 5)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// What a command printed; the binary forwards these.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub stdout: String,
    pub warnings: Vec<String>,
}

struct Loaded {
    cfg: RunConfig,
    scenarios: Vec<Scenario>,
}

fn prepare(flags: &RunFlags) -> Result<Loaded, HarnessError> {
    let cfg = RunConfig::resolve(flags)?;
    cfg.validate()?;
    let scenarios = load_scenarios(cfg.scenario_dir()?)?;
    create_dir(&cfg.out_dir)?;
    Ok(Loaded { cfg, scenarios })
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

enum Factory<'f> {
    Builtin(BuiltinFactory),
    Rl(RlPolicy<'f>),
}

impl Factory<'_> {
    fn get(&self) -> &dyn PlannerFactory {
        match self {
            Factory::Builtin(b) => b,
            Factory::Rl(r) => r,
        }
    }
}

fn factory<'f>(cfg: &RunConfig, name: &str, features: &'f dyn FeatureProvider) -> Result<Factory<'f>, HarnessError> {
    if name == RL_POLICY {
        let path = cfg
            .checkpoint
            .as_deref()
            .ok_or_else(|| HarnessError::Usage("the rl policy needs --checkpoint".into()))?;
        let sac = checkpoint::load(path)?;
        let dim = FusedObserver { provider: features }.dim();
        if sac.obs_dim != dim {
            return Err(HarnessError::Config(format!(
                "checkpoint expects {}-dim observations but the feature setting gives {dim}",
                sac.obs_dim
            )));
        }
        return Ok(Factory::Rl(RlPolicy::snapshot(&sac, features, false)));
    }
    let policy = match SdcPolicy::from_name(name) {
        Some(SdcPolicy::LaneFollow(_)) => SdcPolicy::LaneFollow(cfg.lanefollow),
        Some(p) => p,
        None => return Err(HarnessError::Config(format!("unknown SDC policy {name:?}"))),
    };
    Ok(Factory::Builtin(BuiltinFactory {
        policy,
        open_loop: cfg.open_loop,
    }))
}

fn run_row(cfg: &RunConfig, row: &RowSpec, scenarios: &[Scenario]) -> Result<Vec<EpisodeResult>, HarnessError> {
    let features = cfg.features()?;
    let f = factory(cfg, &row.sdc_policy, features.as_ref())?;
    let batch = BatchConfig {
        workers: cfg.workers,
        seed: cfg.seed,
        ..BatchConfig::default()
    };
    let out = batch_simulate(scenarios, f.get(), &cfg.env_config(row), &batch, None, &mut Vec::new(), |_| {})?;
    Ok(out.episodes)
}

fn simulate(flags: &RunFlags, args: &[String]) -> Result<Output, HarnessError> {
    let Loaded { cfg, scenarios } = prepare(flags)?;
    let rows = cfg.rows()?;
    let [row] = rows.as_slice() else {
        return Err(HarnessError::Usage(format!(
            "simulate runs a single configuration but {} were given; use evaluate for a matrix",
            rows.len()
        )));
    };
    let episodes = run_row(&cfg, row, &scenarios)?;
    let logs = cfg.out_dir.join("logs");
    create_dir(&logs)?;
    for ep in &episodes {
        save_episode_log(ep, &logs.join(format!("{}.{LOG_EXTENSION}", ep.scenario_id)))?;
    }
    let records: Vec<ResultRecord> = episodes.iter().map(|e| ResultRecord::new(row, e)).collect();
    write_file(&cfg.out_dir.join(RESULTS_FILE), &results_to_string(&records))?;
    write_manifest(&cfg.out_dir, "simulate", args, cfg.seed, config_json(&cfg), &scenarios)?;
    Ok(Output {
        stdout: format_table(&aggregate(&records)),
        warnings: Vec::new(),
    })
}

fn evaluate(flags: &RunFlags, from_results: Option<&Path>, args: &[String]) -> Result<Output, HarnessError> {
    if let Some(p) = from_results {
        let records = parse_results(&std::fs::read_to_string(p).map_err(io_err(p))?)?;
        if records.is_empty() {
            return Err(HarnessError::EmptyScenarioSet(p.display().to_string()));
        }
        return Ok(Output {
            stdout: format_table(&aggregate(&records)),
            warnings: Vec::new(),
        });
    }
    let Loaded { cfg, scenarios } = prepare(flags)?;
    let mut records = Vec::new();
    for row in cfg.rows()? {
        for ep in run_row(&cfg, &row, &scenarios)? {
            records.push(ResultRecord::new(&row, &ep));
        }
    }
    write_file(&cfg.out_dir.join(RESULTS_FILE), &results_to_string(&records))?;
    write_manifest(&cfg.out_dir, "evaluate", args, cfg.seed, config_json(&cfg), &scenarios)?;
    Ok(Output {
        stdout: format_table(&aggregate(&records)),
        warnings: Vec::new(),
    })
}

fn gen_benchmark(flags: &RunFlags, args: &[String]) -> Result<Output, HarnessError> {
    let Loaded { cfg, scenarios } = prepare(flags)?;
    let mut goals = String::new();
    let mut warnings = Vec::new();
    let mut written = 0;
    for sc in &scenarios {
        let result = generate_goals(sc, &cfg.causality).and_then(|set| Ok((set, augment_scenario(sc, &cfg.causality)?)));
        match result {
            Ok((set, augmented)) => {
                goals.push_str(&(serde_json::to_string(&set).expect("goal set serializes") + "\n"));
                for a in &augmented {
                    let path = cfg.out_dir.join(format!("{}.{SCENARIO_EXTENSION}", a.id));
                    save_scenario(a, &path).map_err(|source| HarnessError::Scenario {
                        path: path.display().to_string(),
                        source,
                    })?;
                    written += 1;
                }
            }
            // scenarios whose SDC cannot be placed on the lane graph are skipped
            Err(source @ (CausalityError::OffLane { .. } | CausalityError::NotConnected { .. })) => {
                warnings.push(format!("skipped {}: {source}", sc.id));
            }
            Err(source) => {
                return Err(HarnessError::Benchmark {
                    scenario_id: sc.id.clone(),
                    source,
                })
            }
        }
    }
    if written == 0 {
        return Err(HarnessError::EmptyScenarioSet(format!(
            "{} (no scenario produced goals)",
            cfg.scenario_dir()?.display()
        )));
    }
    write_file(&cfg.out_dir.join(GOALS_FILE), &goals)?;
    write_manifest(&cfg.out_dir, "gen-benchmark", args, cfg.seed, config_json(&cfg), &scenarios)?;
    Ok(Output {
        stdout: format!("{written} augmented scenarios from {} inputs\n", scenarios.len()),
        warnings,
    })
}

fn train_rl(flags: &RunFlags, args: &[String]) -> Result<Output, HarnessError> {
    let Loaded { mut cfg, scenarios } = prepare(flags)?;
    let rows = cfg.rows()?;
    let [row] = rows.as_slice() else {
        return Err(HarnessError::Usage("train-rl takes a single dynamics/NPC configuration".into()));
    };
    // the run seed drives network initialization too
    cfg.sac.seed = cfg.seed;
    let features = cfg.features()?;
    let mut log = String::new();
    let mut stdout = String::new();
    let sac = train_driving(
        &scenarios,
        &cfg.env_config(row),
        &cfg.sac,
        features.as_ref(),
        cfg.epochs,
        cfg.workers,
        cfg.seed,
        |stats| {
            log.push_str(&(serde_json::to_string(stats).expect("stats serialize") + "\n"));
            let r = &stats.report;
            let _ = writeln!(
                stdout,
                "epoch {:>3}  compl {:.3}  col {:.3}  off {:.3}  stu {:.3}  transitions {}  updates {}",
                stats.epoch, r.completion, r.collision, r.offroad, r.stuck, stats.transitions, stats.updates
            );
        },
    )?;
    checkpoint::save(&sac, &cfg.out_dir.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out_dir.join(TRAINING_LOG_FILE), &log)?;
    write_manifest(&cfg.out_dir, "train-rl", args, cfg.seed, config_json(&cfg), &scenarios)?;
    Ok(Output {
        stdout,
        warnings: Vec::new(),
    })
}

fn render(log: &Path, scenario: &Path, out_dir: &Path, scale: f64, args: &[String]) -> Result<Output, HarnessError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(HarnessError::Usage(format!("--scale must be positive, got {scale}")));
    }
    let sc = load_scenario(scenario).map_err(|source| HarnessError::Scenario {
        path: scenario.display().to_string(),
        source,
    })?;
    let ep = load_episode_log(log)?;
    let rendered = render_episode(
        &sc,
        &ep,
        &RenderOptions {
            scale,
            ..RenderOptions::default()
        },
    )?;
    create_dir(out_dir)?;
    for (step, svg) in ep.log.iter().zip(&rendered.frames) {
        write_file(&out_dir.join(format!("frame_{:04}.svg", step.step)), svg)?;
    }
    let config = serde_json::json!({ "log": log, "scenario": scenario, "scale": scale });
    write_manifest(out_dir, "render", args, 0, config, std::slice::from_ref(&sc))?;
    Ok(Output {
        stdout: format!("{} frames written to {}\n", rendered.frames.len(), out_dir.display()),
        warnings: rendered.warnings,
    })
}

fn synth(
    out_dir: &Path,
    template: &str,
    npcs: Option<usize>,
    count: u64,
    seed: u64,
    args: &[String],
) -> Result<Output, HarnessError> {
    let templates = if template == "all" {
        Template::ALL.to_vec()
    } else {
        vec![Template::from_name(template)?]
    };
    create_dir(out_dir)?;
    let mut scenarios = Vec::new();
    for t in templates {
        let n = npcs.unwrap_or(match t {
            Template::Straight3Lane => 4,
            Template::TJunction => 3,
            Template::YJunction => 2,
            Template::FourWay => 5,
        });
        for i in 0..count {
            let sc = synth_scenario(&SynthSpec::new(t.name(), n), seed + i)?;
            let path = out_dir.join(format!("{}.{SCENARIO_EXTENSION}", sc.id));
            save_scenario(&sc, &path).map_err(|source| HarnessError::Scenario {
                path: path.display().to_string(),
                source,
            })?;
            scenarios.push(sc);
        }
    }
    let config = serde_json::json!({ "template": template, "npcs": npcs, "count": count, "seed": seed });
    // digest in the order a later load will see them
    let on_disk = load_scenarios(out_dir)?;
    write_manifest(out_dir, "synth", args, seed, config, &on_disk)?;
    Ok(Output {
        stdout: format!("{} scenarios written to {}\n", scenarios.len(), out_dir.display()),
        warnings: Vec::new(),
    })
}

pub fn run(cli: &Cli, args: &[String]) -> Result<Output, HarnessError> {
    match &cli.command {
        Command::Simulate(f) => simulate(f, args),
        Command::Evaluate { flags, from_results } => evaluate(flags, from_results.as_deref(), args),
        Command::GenBenchmark(f) => gen_benchmark(f, args),
        Command::TrainRl(f) => train_rl(f, args),
        Command::Render {
            log,
            scenario,
            out_dir,
            scale,
        } => render(log, scenario, out_dir, *scale, args),
        Command::Synth {
            out_dir,
            template,
            npcs,
            count,
            seed,
        } => synth(out_dir, template, *npcs, *count, *seed, args),
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_args(args: &[String]) -> Result<Output, HarnessError> {
    let cli = Cli::try_parse_from(args).map_err(|e| HarnessError::Usage(e.to_string()))?;
    run(&cli, args.get(1..).unwrap_or_default())
}
