//! Closed-loop engine: per-episode state, one-step transition, rollouts and
//! deterministic multi-worker batches.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

use crate::controller::{mpc_track, MpcConfig, MpcError};
use crate::dynamics::{action_toward, implied_action, step_bicycle, step_default, Action, EgoState, VehicleParams};
use crate::geometry::{Vec2, OrientedBox};
use crate::metrics::{
    classify_episode, collision_gap, is_uncomfortable, offroad_distance, step_reward, MetricsReport, RewardBreakdown,
    RewardWeights, StepSignals, TerminalClass, COMPLETION_RADIUS,
};
use crate::policies::{IdmFollower, IdmParams, NpcPolicy, Obstacle, PlannerFactory, PlannerOutput, PolicyError};
use crate::scenario::{AgentKind, AgentState, Scenario, CURRENT_FRAME, FUTURE_FRAMES, HISTORY_FRAMES, TRACK_FRAMES};

/// Episode step cap: the 8 s logged future at 0.1 s.
pub const MAX_STEPS: usize = FUTURE_FRAMES;
/// Scenarios per training synchronization.
pub const DEFAULT_CADENCE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsModel {
    /// Teleport to the first predicted waypoint.
    Default,
    Bicycle,
}

impl DynamicsModel {
    pub fn name(self) -> &'static str {
        match self {
            DynamicsModel::Default => "default",
            DynamicsModel::Bicycle => "bicycle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "default" => Some(DynamicsModel::Default),
            "bicycle" => Some(DynamicsModel::Bicycle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dynamics: DynamicsModel,
    /// Route waypoint outputs through the MPC tracker.
    pub mpc: bool,
    pub npc_policy: NpcPolicy,
    pub vehicle: VehicleParams,
    pub mpc_config: MpcConfig,
    pub idm: IdmParams,
    pub reward_weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsModel::Default,
            mpc: true,
            npc_policy: NpcPolicy::Expert,
            vehicle: VehicleParams::default(),
            mpc_config: MpcConfig::default(),
            idm: IdmParams::default(),
            reward_weights: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.vehicle.validate()?;
        self.mpc_config.validate()?;
        self.idm.validate()?;
        self.reward_weights.validate()
    }

    /// Number of waypoints requested from planners.
    pub fn planning_horizon(&self) -> usize {
        self.mpc_config.horizon.max(1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("scenario {scenario_id}: SDC has no valid state at the current frame")]
    InvalidSdc { scenario_id: String },
    #[error("step called after the episode ended")]
    AfterDone,
    #[error("planner output is empty or non-finite")]
    BadPlannerOutput,
    #[error("controller: {0}")]
    Controller(#[from] MpcError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("worker panicked while simulating scenario {scenario_id}: {message}")]
    WorkerPanic { scenario_id: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSnapshot {
    pub track: usize,
    pub agent_id: u32,
    pub kind: AgentKind,
    pub state: AgentState,
}

/// Read-only snapshot handed to planners.
#[derive(Debug, Clone)]
pub struct SimulatorView<'a> {
    pub scenario: &'a Scenario,
    pub step: usize,
    pub ego: EgoState,
    pub ego_length: f64,
    pub ego_width: f64,
    /// The last 11 ego states, oldest first; the last entry is `ego`.
    pub ego_history: Vec<EgoState>,
    pub agents: Vec<AgentSnapshot>,
    pub goal: Vec2,
}

impl SimulatorView<'_> {
    /// Log frame aligned with the current step.
    pub fn frame(&self) -> usize {
        CURRENT_FRAME + self.step
    }
}

/// Box of one agent as logged for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentBox {
    pub agent_id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based index of the step just taken.
    pub step: usize,
    pub ego: EgoState,
    pub action: Action,
    pub signals: StepSignals,
    pub reward: RewardBreakdown,
    pub uncomfortable: bool,
    pub agents: Vec<AgentBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub terminal: TerminalClass,
    pub steps: usize,
    pub total_reward: f64,
    pub initial_ego: EgoState,
    pub goal: Vec2,
    /// Set when a policy or controller failure ended the episode early.
    pub error: Option<String>,
    pub log: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub terminal: Option<TerminalClass>,
}

/// Maps a view to the observation vector stored in transitions.
pub trait Observer: Sync {
    fn dim(&self) -> usize;
    fn observe(&self, view: &SimulatorView) -> Vec<f64>;
}

#[derive(Debug, Clone)]
enum NpcDriver {
    Replay,
    Idm(IdmFollower),
}

#[derive(Debug, Clone)]
struct Npc {
    track: usize,
    driver: NpcDriver,
    state: AgentState,
    active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub terminal: Option<TerminalClass>,
}

pub struct Env<'a> {
    scenario: &'a Scenario,
    cfg: EnvConfig,
    ego: EgoState,
    ego_length: f64,
    ego_width: f64,
    history: VecDeque<EgoState>,
    npcs: Vec<Npc>,
    step: usize,
    prev_action: Option<Action>,
    warm_start: Option<Vec<Action>>,
    log: Vec<StepRecord>,
    terminal: Option<TerminalClass>,
    initial: EgoState,
}

fn ego_from(s: &AgentState) -> EgoState {
    EgoState::new(s.x, s.y, s.heading, s.speed())
}

impl<'a> Env<'a> {
    /// Place every agent at its current-frame logged state.
    pub fn reset(scenario: &'a Scenario, cfg: &EnvConfig) -> Result<Self, EnvError> {
        let sdc = scenario.sdc();
        let cur = sdc.states[CURRENT_FRAME];
        if !cur.valid {
            return Err(EnvError::InvalidSdc {
                scenario_id: scenario.id.clone(),
            });
        }
        let ego = ego_from(&cur);
        let history = sdc.states[..HISTORY_FRAMES]
            .iter()
            .map(|s| if s.valid { ego_from(s) } else { ego })
            .collect();
        let npcs = scenario
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, t)| *i != scenario.sdc_index && t.states[CURRENT_FRAME].valid)
            .map(|(i, t)| {
                let driver = match (cfg.npc_policy, t.kind) {
                    (NpcPolicy::Idm, AgentKind::Vehicle) => NpcDriver::Idm(IdmFollower::from_track(t, CURRENT_FRAME)),
                    _ => NpcDriver::Replay,
                };
                Npc {
                    track: i,
                    driver,
                    state: t.states[CURRENT_FRAME],
                    active: true,
                }
            })
            .collect();
        Ok(Self {
            scenario,
            cfg: *cfg,
            ego,
            ego_length: cur.length,
            ego_width: cur.width,
            history,
            npcs,
            step: 0,
            prev_action: None,
            warm_start: None,
            log: Vec::new(),
            terminal: None,
            initial: ego,
        })
    }

    pub fn view(&self) -> SimulatorView<'a> {
        SimulatorView {
            scenario: self.scenario,
            step: self.step,
            ego: self.ego,
            ego_length: self.ego_length,
            ego_width: self.ego_width,
            ego_history: self.history.iter().copied().collect(),
            agents: self
                .npcs
                .iter()
                .filter(|n| n.active)
                .map(|n| {
                    let t = &self.scenario.tracks[n.track];
                    AgentSnapshot {
                        track: n.track,
                        agent_id: t.agent_id,
                        kind: t.kind,
                        state: n.state,
                    }
                })
                .collect(),
            goal: self.scenario.goal,
        }
    }

    pub fn ego(&self) -> EgoState {
        self.ego
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.terminal.is_some()
    }

    pub fn terminal(&self) -> Option<TerminalClass> {
        self.terminal
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn ego_box(&self) -> OrientedBox {
        OrientedBox::new(self.ego.position(), self.ego.theta, self.ego_length, self.ego_width)
    }

    /// Next ego state and the action credited for it.
    fn advance_ego(&mut self, output: &PlannerOutput) -> Result<(EgoState, Action), EnvError> {
        if !output.is_finite() {
            return Err(EnvError::BadPlannerOutput);
        }
        let p = &self.cfg.vehicle;
        match output {
            PlannerOutput::Action(a) => {
                let a = p.clamp(*a);
                Ok((step_bicycle(&self.ego, a, p), a))
            }
            PlannerOutput::Waypoints(w) if self.cfg.mpc => {
                let h = self.cfg.mpc_config.horizon;
                let mut reference = w.clone();
                while reference.len() < h {
                    reference.push(*reference.last().expect("non-empty"));
                }
                let sol = mpc_track(&self.ego, &reference, &self.cfg.mpc_config, p, self.warm_start.as_deref())?;
                let a = sol.actions[0];
                let mut shifted = sol.actions[1..].to_vec();
                shifted.push(*sol.actions.last().expect("horizon >= 1"));
                self.warm_start = Some(shifted);
                Ok((step_bicycle(&self.ego, a, p), a))
            }
            PlannerOutput::Waypoints(w) => match self.cfg.dynamics {
                DynamicsModel::Default => {
                    let next = step_default(&self.ego, &w[0], p.dt);
                    Ok((next, implied_action(&self.ego, &next, p)))
                }
                DynamicsModel::Bicycle => {
                    let a = action_toward(&self.ego, &w[0], p);
                    Ok((step_bicycle(&self.ego, a, p), a))
                }
            },
        }
    }

    /// Advance all NPCs by one step, simultaneously, from pre-step states.
    fn advance_npcs(&mut self) {
        let next_frame = (CURRENT_FRAME + self.step + 1).min(TRACK_FRAMES - 1);
        let ego_ob = Obstacle {
            position: self.ego.position(),
            heading: self.ego.theta,
            speed: self.ego.v,
            length: self.ego_length,
        };
        let snapshot: Vec<(usize, Obstacle)> = self
            .npcs
            .iter()
            .enumerate()
            .filter(|(_, n)| n.active)
            .map(|(i, n)| {
                (
                    i,
                    Obstacle {
                        position: n.state.position(),
                        heading: n.state.heading,
                        speed: n.state.speed(),
                        length: n.state.length,
                    },
                )
            })
            .collect();
        let graph = &self.scenario.lane_graph;
        let accels: Vec<Option<f64>> = self
            .npcs
            .iter()
            .enumerate()
            .map(|(i, n)| match &n.driver {
                NpcDriver::Idm(f) if n.active => {
                    let others: Vec<Obstacle> = snapshot
                        .iter()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, o)| *o)
                        .chain(std::iter::once(ego_ob))
                        .collect();
                    Some(f.accel(graph, &others, &self.cfg.idm))
                }
                _ => None,
            })
            .collect();
        let dt = self.cfg.vehicle.dt;
        for (n, acc) in self.npcs.iter_mut().zip(accels) {
            if !n.active {
                continue;
            }
            match &mut n.driver {
                NpcDriver::Replay => {
                    let s = self.scenario.tracks[n.track].states[next_frame];
                    if s.valid {
                        n.state = s;
                    } else {
                        // the agent leaves the scene
                        n.active = false;
                    }
                }
                NpcDriver::Idm(f) => {
                    f.advance(acc.unwrap_or(0.0), dt);
                    let p = f.position();
                    let h = f.heading();
                    n.state = AgentState {
                        x: p.x,
                        y: p.y,
                        heading: h,
                        vx: f.v * h.cos(),
                        vy: f.v * h.sin(),
                        length: f.length,
                        width: f.width,
                        valid: true,
                    };
                }
            }
        }
    }

    /// Apply one planner output and advance the world by 0.1 s.
    pub fn step(&mut self, output: &PlannerOutput) -> Result<StepOutcome, EnvError> {
        if self.terminal.is_some() {
            return Err(EnvError::AfterDone);
        }
        let (next, action) = self.advance_ego(output)?;
        self.advance_npcs();
        let goal = self.scenario.goal;
        let prev_dist = self.ego.position().dist(goal);
        self.ego = next;
        self.history.pop_front();
        self.history.push_back(next);
        self.step += 1;

        let others: Vec<OrientedBox> = self.npcs.iter().filter(|n| n.active).map(|n| n.state.bbox()).collect();
        let d_collision = collision_gap(&self.ego_box(), &others);
        let d_offroad = offroad_distance(next.position(), &self.scenario.lane_graph);
        let dist = next.position().dist(goal);
        let (delta_accel, delta_turning) = match self.prev_action {
            Some(p) => ((action.accel - p.accel).abs(), (action.steer - p.steer).abs()),
            None => (0.0, 0.0),
        };
        let mut signals = StepSignals {
            d_collision,
            d_offroad,
            d_progress: prev_dist - dist,
            delta_accel,
            delta_turning,
            is_goal: false,
        };
        signals.is_goal = dist < COMPLETION_RADIUS && !signals.collided() && !signals.offroad();
        self.prev_action = Some(action);
        let reward = step_reward(&signals, &self.cfg.reward_weights);
        let agents = self
            .npcs
            .iter()
            .filter(|n| n.active)
            .map(|n| AgentBox {
                agent_id: self.scenario.tracks[n.track].agent_id,
                x: n.state.x,
                y: n.state.y,
                heading: n.state.heading,
                length: n.state.length,
                width: n.state.width,
            })
            .collect();
        self.log.push(StepRecord {
            step: self.step,
            ego: next,
            action,
            signals,
            reward,
            uncomfortable: is_uncomfortable(action.accel, &self.cfg.vehicle),
            agents,
        });
        let done = signals.collided() || signals.offroad() || signals.is_goal || self.step >= MAX_STEPS;
        if done {
            let sig: Vec<StepSignals> = self.log.iter().map(|r| r.signals).collect();
            self.terminal = Some(classify_episode(&sig, next.position(), goal));
        }
        Ok(StepOutcome {
            reward: reward.total,
            done,
            terminal: self.terminal,
        })
    }

    /// End the episode early (policy failure): classified as stuck.
    fn abort(&mut self) {
        if self.terminal.is_none() {
            self.terminal = Some(TerminalClass::Stuck);
        }
    }

    fn into_result(self, error: Option<String>) -> EpisodeResult {
        EpisodeResult {
            scenario_id: self.scenario.id.clone(),
            terminal: self.terminal.unwrap_or(TerminalClass::Stuck),
            steps: self.step,
            total_reward: self.log.iter().map(|r| r.reward.total).sum(),
            initial_ego: self.initial,
            goal: self.scenario.goal,
            error,
            log: self.log,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub result: EpisodeResult,
    pub transitions: Vec<Transition>,
}

/// Run one episode to termination. Policy and controller failures end the
/// episode as stuck with the error recorded; setup failures are returned.
pub fn rollout(
    factory: &dyn PlannerFactory,
    scenario: &Scenario,
    cfg: &EnvConfig,
    seed: u64,
    observer: Option<&dyn Observer>,
) -> Result<Episode, EnvError> {
    let mut env = Env::reset(scenario, cfg)?;
    let mut planner = factory.build(scenario, seed);
    let horizon = cfg.planning_horizon();
    let mut transitions = Vec::new();
    let mut error = None;
    let mut obs = observer.map(|o| o.observe(&env.view()));
    while !env.is_done() {
        let view = env.view();
        let outcome = planner
            .plan(&view, horizon)
            .map_err(EnvError::from)
            .and_then(|out| env.step(&out));
        match outcome {
            Ok(o) => {
                if let (Some(ob), Some(prev)) = (observer, obs.take()) {
                    let next = ob.observe(&env.view());
                    transitions.push(Transition {
                        obs: prev,
                        action: env.log.last().expect("step logged").action,
                        reward: o.reward,
                        next_obs: next.clone(),
                        done: o.done,
                        terminal: o.terminal,
                    });
                    obs = Some(next);
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                env.abort();
            }
        }
    }
    Ok(Episode {
        result: env.into_result(error),
        transitions,
    })
}

/// Per-scenario seed derived from the global seed and the scenario id only.
pub fn scenario_seed(seed: u64, scenario_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in scenario_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    // splitmix64 finalizer over the combination
    let mut z = h ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Simulate `scenarios` on `workers` threads. Scenario `i` goes to worker
/// `i % workers`; results come back in scenario order regardless.
pub fn simulate_parallel(
    scenarios: &[Scenario],
    factory: &dyn PlannerFactory,
    cfg: &EnvConfig,
    workers: usize,
    seed: u64,
    observer: Option<&dyn Observer>,
) -> Result<Vec<Episode>, EnvError> {
    let workers = workers.max(1).min(scenarios.len().max(1));
    let run_one = |sc: &Scenario| -> Result<Episode, EnvError> {
        catch_unwind(AssertUnwindSafe(|| {
            rollout(factory, sc, cfg, scenario_seed(seed, &sc.id), observer)
        }))
        .unwrap_or_else(|p| {
            Err(EnvError::WorkerPanic {
                scenario_id: sc.id.clone(),
                message: panic_message(p.as_ref()),
            })
        })
    };
    let mut slots: Vec<Option<Result<Episode, EnvError>>> = Vec::new();
    slots.resize_with(scenarios.len(), || None);
    if workers == 1 {
        for (slot, sc) in slots.iter_mut().zip(scenarios) {
            *slot = Some(run_one(sc));
        }
    } else {
        let per_worker: Vec<Vec<(usize, Result<Episode, EnvError>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run_one = &run_one;
                    scope.spawn(move || {
                        (w..scenarios.len())
                            .step_by(workers)
                            .map(|i| (i, run_one(&scenarios[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            // the barrier: every worker joins before anything is merged
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panics are caught per scenario"))
                .collect()
        });
        for (i, r) in per_worker.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|s| s.expect("every scenario simulated")).collect()
}

/// Receives merged transitions at each barrier.
pub trait TransitionSink {
    fn push(&mut self, t: Transition);
}

impl TransitionSink for Vec<Transition> {
    fn push(&mut self, t: Transition) {
        Vec::push(self, t);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub report: MetricsReport,
    pub episodes: Vec<EpisodeResult>,
    /// Number of training synchronizations fired.
    pub train_triggers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub workers: usize,
    pub seed: u64,
    /// Scenarios per synchronization barrier.
    pub cadence: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            seed: 0,
            cadence: DEFAULT_CADENCE,
        }
    }
}

/// Simulate in chunks of `cadence` scenarios. After each full chunk, once
/// all its rollouts have finished and their transitions have been merged
/// into `buffer` in scenario order, `on_train` fires.
pub fn batch_simulate<S: TransitionSink>(
    scenarios: &[Scenario],
    factory: &dyn PlannerFactory,
    cfg: &EnvConfig,
    batch: &BatchConfig,
    observer: Option<&dyn Observer>,
    buffer: &mut S,
    mut on_train: impl FnMut(&mut S),
) -> Result<BatchOutput, EnvError> {
    if batch.workers == 0 {
        return Err(EnvError::Config("workers must be at least 1".into()));
    }
    cfg.validate().map_err(EnvError::Config)?;
    let cadence = batch.cadence.max(1);
    let mut episodes = Vec::with_capacity(scenarios.len());
    let mut triggers = 0;
    for chunk in scenarios.chunks(cadence) {
        let eps = simulate_parallel(chunk, factory, cfg, batch.workers, batch.seed, observer)?;
        for ep in eps {
            for t in ep.transitions {
                buffer.push(t);
            }
            episodes.push(ep.result);
        }
        if chunk.len() == cadence {
            on_train(buffer);
            triggers += 1;
        }
    }
    let classes: Vec<TerminalClass> = episodes.iter().map(|e| e.terminal).collect();
    let report = MetricsReport::from_classes(&classes).ok_or(EnvError::Config("empty scenario set".into()))?;
    Ok(BatchOutput {
        report,
        episodes,
        train_triggers: triggers,
    })
}

/// Number of map points in the observation.
pub const OBS_MAP_POINTS: usize = 32;
/// Number of agent slots in the observation.
pub const OBS_AGENTS: usize = 8;
/// Features per agent slot.
pub const OBS_AGENT_FEATURES: usize = 6;
/// Simulator state block length.
pub const OBS_DIM: usize = 4 + 2 + 2 * OBS_MAP_POINTS + OBS_AGENTS * OBS_AGENT_FEATURES;
/// Distances and speeds in the observation are divided by this.
pub const OBS_SCALE: f64 = 10.0;
/// Spacing of the map point cloud sampled from lanes and road edges.
const MAP_POINT_SPACING: f64 = 2.0;

/// Fixed-size simulator observation, all in the ego frame:
///
/// | slice     | content                                                       |
/// |-----------|---------------------------------------------------------------|
/// | 0..4      | speed, cos θ, sin θ, goal distance                            |
/// | 4..6      | goal position                                                 |
/// | 6..70     | 32 nearest map points (x, y), nearest first                   |
/// | 70..118   | 8 nearest agents: x, y, vx, vy, relative heading, length      |
///
/// Missing map points and agent slots are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct StateObserver;

fn map_points(sc: &Scenario) -> Vec<Vec2> {
    let g = &sc.lane_graph;
    let mut pts = Vec::new();
    for l in g.lanes() {
        pts.extend(l.centerline.resample(MAP_POINT_SPACING));
    }
    for e in g.road_edges() {
        pts.extend(e.resample(MAP_POINT_SPACING));
    }
    pts
}

impl Observer for StateObserver {
    fn dim(&self) -> usize {
        OBS_DIM
    }

    fn observe(&self, view: &SimulatorView) -> Vec<f64> {
        let e = view.ego;
        let origin = e.position();
        let to_local = |p: Vec2| (p - origin).rotate(-e.theta) * (1.0 / OBS_SCALE);
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend([
            e.v / OBS_SCALE,
            e.theta.cos(),
            e.theta.sin(),
            origin.dist(view.goal) / OBS_SCALE,
        ]);
        let g = to_local(view.goal);
        obs.extend([g.x, g.y]);

        let mut pts: Vec<(f64, Vec2)> = map_points(view.scenario)
            .into_iter()
            .map(|p| (p.dist(origin), p))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for k in 0..OBS_MAP_POINTS {
            match pts.get(k) {
                Some((_, p)) => {
                    let q = to_local(*p);
                    obs.extend([q.x, q.y]);
                }
                None => obs.extend([0.0, 0.0]),
            }
        }

        let mut agents: Vec<&AgentSnapshot> = view.agents.iter().collect();
        agents.sort_by(|a, b| {
            a.state
                .position()
                .dist(origin)
                .total_cmp(&b.state.position().dist(origin))
                .then(a.agent_id.cmp(&b.agent_id))
        });
        let ego_vel = Vec2::from_angle(e.theta) * e.v;
        for k in 0..OBS_AGENTS {
            match agents.get(k) {
                Some(a) => {
                    let p = to_local(a.state.position());
                    let v = (Vec2::new(a.state.vx, a.state.vy) - ego_vel).rotate(-e.theta) * (1.0 / OBS_SCALE);
                    let h = crate::geometry::angle_diff(a.state.heading, e.theta);
                    obs.extend([p.x, p.y, v.x, v.y, h, a.state.length / OBS_SCALE]);
                }
                None => obs.extend([0.0; OBS_AGENT_FEATURES]),
            }
        }
        debug_assert_eq!(obs.len(), OBS_DIM);
        obs
    }
}
