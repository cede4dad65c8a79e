//! C ABI over the simulator.
//!
//! Every fallible call returns a `DsStatus`. On failure a message is kept
//! per thread and can be read with `ds_last_error_message`. Handles are
//! opaque; each `*_new`/`*_load` has a matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use drivesim::causality::{generate_goals, ActionCostTable};
use drivesim::dynamics::{Action, Waypoint};
use drivesim::env::{rollout, DynamicsModel, Env, EnvConfig, Observer, StateObserver, OBS_DIM};
use drivesim::format::{load_scenario, parse_scenario};
use drivesim::metrics::{RewardWeights, TerminalClass};
use drivesim::policies::{BuiltinFactory, NpcPolicy, PlannerOutput, SdcPolicy};
use drivesim::scenario::Scenario;
use drivesim::synth::{synth_scenario, SynthSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Simulation = 5,
    EpisodeDone = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsDynamics {
    Default = 0,
    Bicycle = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsNpcPolicy {
    Expert = 0,
    Idm = 1,
}

/// Terminal class of an episode; `Running` while it continues.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsTerminal {
    Running = -1,
    Completed = 0,
    Collided = 1,
    Offroad = 2,
    Stuck = 3,
}

impl From<Option<TerminalClass>> for DsTerminal {
    fn from(t: Option<TerminalClass>) -> Self {
        match t {
            None => DsTerminal::Running,
            Some(TerminalClass::Completed) => DsTerminal::Completed,
            Some(TerminalClass::Collided) => DsTerminal::Collided,
            Some(TerminalClass::Offroad) => DsTerminal::Offroad,
            Some(TerminalClass::Stuck) => DsTerminal::Stuck,
        }
    }
}

/// Subset of the environment configuration; unlisted settings keep their
/// defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsEnvConfig {
    pub dynamics: DsDynamics,
    /// Nonzero routes waypoints through the MPC tracker.
    pub mpc: u8,
    pub npc_policy: DsNpcPolicy,
    pub weight_offroad: f64,
    pub weight_collision: f64,
    pub weight_progress: f64,
}

impl DsEnvConfig {
    fn to_env(self) -> EnvConfig {
        EnvConfig {
            dynamics: match self.dynamics {
                DsDynamics::Default => DynamicsModel::Default,
                DsDynamics::Bicycle => DynamicsModel::Bicycle,
            },
            mpc: self.mpc != 0,
            npc_policy: match self.npc_policy {
                DsNpcPolicy::Expert => NpcPolicy::Expert,
                DsNpcPolicy::Idm => NpcPolicy::Idm,
            },
            reward_weights: RewardWeights::new(self.weight_offroad, self.weight_collision, self.weight_progress),
            ..EnvConfig::default()
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsEgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsStepResult {
    pub reward: f64,
    pub done: u8,
    pub terminal: DsTerminal,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsEpisodeSummary {
    pub terminal: DsTerminal,
    pub steps: usize,
    pub total_reward: f64,
}

/// A loaded scenario.
pub struct DsScenario {
    scenario: Scenario,
    id: CString,
}

/// A running episode. Owns a copy of its scenario.
pub struct DsEnv {
    // declared before `scenario` so it is dropped first
    env: Env<'static>,
    scenario: Box<Scenario>,
    cfg: EnvConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

fn fail(status: DsStatus, msg: impl Into<String>) -> DsStatus {
    set_error(msg);
    status
}

/// Run `f`, converting panics into `DsStatus::Panic`.
fn guard(f: impl FnOnce() -> DsStatus) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DsStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DsStatus> {
    if p.is_null() {
        return Err(fail(DsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn new_scenario(sc: Scenario, out: *mut *mut DsScenario) -> DsStatus {
    let id = CString::new(sc.id.replace('\0', " ")).expect("interior NULs removed");
    // SAFETY: callers check `out` for null.
    unsafe { *out = Box::into_raw(Box::new(DsScenario { scenario: sc, id })) };
    DsStatus::Ok
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length of the simulator observation vector.
#[no_mangle]
pub extern "C" fn ds_observation_dim() -> usize {
    OBS_DIM
}

#[no_mangle]
pub extern "C" fn ds_env_config_default() -> DsEnvConfig {
    let w = RewardWeights::default();
    DsEnvConfig {
        dynamics: DsDynamics::Default,
        mpc: 1,
        npc_policy: DsNpcPolicy::Expert,
        weight_offroad: w.offroad,
        weight_collision: w.collision,
        weight_progress: w.progress,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_load(path: *const c_char, out: *mut *mut DsScenario) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(Path::new(path)) {
            Ok(sc) => new_scenario(sc, out),
            Err(e @ drivesim::format::FormatError::Io { .. }) => fail(DsStatus::Io, e.to_string()),
            Err(e) => fail(DsStatus::Format, format!("{path}: {e}")),
        }
    })
}

/// Parse a scenario from the text of a scenario file.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_parse(text: *const c_char, out: *mut *mut DsScenario) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsStatus::NullPointer, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_scenario(text) {
            Ok(sc) => new_scenario(sc, out),
            Err(e) => fail(DsStatus::Format, e.to_string()),
        }
    })
}

/// Synthesize a scenario from a map template name.
///
/// # Safety
/// `template_name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_synth(
    template_name: *const c_char,
    npcs: usize,
    seed: u64,
    out: *mut *mut DsScenario,
) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsStatus::NullPointer, "out is null");
        }
        let name = match str_arg(template_name, "template_name") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match synth_scenario(&SynthSpec::new(name, npcs), seed) {
            Ok(sc) => new_scenario(sc, out),
            Err(e) => fail(DsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `sc` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_free(sc: *mut DsScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Scenario id, valid while the handle lives. Null if `sc` is null.
///
/// # Safety
/// `sc` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_id(sc: *const DsScenario) -> *const c_char {
    sc.as_ref().map_or(std::ptr::null(), |s| s.id.as_ptr())
}

/// # Safety
/// `sc` must be a live scenario handle; `x` and `y` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_goal(sc: *const DsScenario, x: *mut f64, y: *mut f64) -> DsStatus {
    let (Some(s), false, false) = (sc.as_ref(), x.is_null(), y.is_null()) else {
        return fail(DsStatus::NullPointer, "null argument");
    };
    *x = s.scenario.goal.x;
    *y = s.scenario.goal.y;
    DsStatus::Ok
}

/// Alternative goals with the default cost table, original goal first, as
/// interleaved x, y pairs. `count` receives the number of goals; if
/// `capacity` (in goals) is too small nothing is written and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `sc` must be a live scenario handle, `count` a valid pointer and `xy`
/// valid for `2 * capacity` doubles (it may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn ds_scenario_goals(
    sc: *const DsScenario,
    xy: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> DsStatus {
    guard(|| {
        let (Some(s), false) = (sc.as_ref(), count.is_null()) else {
            return fail(DsStatus::NullPointer, "null argument");
        };
        let set = match generate_goals(&s.scenario, &ActionCostTable::default()) {
            Ok(set) => set,
            Err(e) => return fail(DsStatus::Simulation, e.to_string()),
        };
        *count = set.goals.len();
        if set.goals.len() > capacity {
            return fail(
                DsStatus::BufferTooSmall,
                format!("{} goals do not fit in {capacity}", set.goals.len()),
            );
        }
        if set.goals.is_empty() {
            return DsStatus::Ok;
        }
        if xy.is_null() {
            return fail(DsStatus::NullPointer, "xy is null");
        }
        let buf = std::slice::from_raw_parts_mut(xy, 2 * capacity);
        for (i, g) in set.goals.iter().enumerate() {
            buf[2 * i] = g.point.x;
            buf[2 * i + 1] = g.point.y;
        }
        DsStatus::Ok
    })
}

/// Run a whole episode with a built-in SDC policy ("expert", "lanefollow"
/// or "constvel"). A null `cfg` means defaults.
///
/// # Safety
/// `sc` must be a live scenario handle, `policy` a NUL-terminated string,
/// `cfg` null or valid, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_simulate(
    sc: *const DsScenario,
    policy: *const c_char,
    cfg: *const DsEnvConfig,
    seed: u64,
    out: *mut DsEpisodeSummary,
) -> DsStatus {
    guard(|| {
        let (Some(s), false) = (sc.as_ref(), out.is_null()) else {
            return fail(DsStatus::NullPointer, "null argument");
        };
        let name = match str_arg(policy, "policy") {
            Ok(p) => p,
            Err(st) => return st,
        };
        let Some(policy) = SdcPolicy::from_name(name) else {
            return fail(DsStatus::InvalidArgument, format!("unknown policy {name:?}"));
        };
        let env_cfg = cfg.as_ref().copied().unwrap_or_else(|| ds_env_config_default()).to_env();
        if let Err(e) = env_cfg.validate() {
            return fail(DsStatus::InvalidArgument, e);
        }
        match rollout(&BuiltinFactory::new(policy), &s.scenario, &env_cfg, seed, None) {
            Ok(ep) => {
                *out = DsEpisodeSummary {
                    terminal: Some(ep.result.terminal).into(),
                    steps: ep.result.steps,
                    total_reward: ep.result.total_reward,
                };
                DsStatus::Ok
            }
            Err(e) => fail(DsStatus::Simulation, e.to_string()),
        }
    })
}

/// Start an episode on a copy of `sc`. A null `cfg` means defaults.
///
/// # Safety
/// `sc` must be a live scenario handle, `cfg` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ds_env_new(sc: *const DsScenario, cfg: *const DsEnvConfig, out: *mut *mut DsEnv) -> DsStatus {
    guard(|| {
        let (Some(s), false) = (sc.as_ref(), out.is_null()) else {
            return fail(DsStatus::NullPointer, "null argument");
        };
        let env_cfg = cfg.as_ref().copied().unwrap_or_else(|| ds_env_config_default()).to_env();
        if let Err(e) = env_cfg.validate() {
            return fail(DsStatus::InvalidArgument, e);
        }
        let scenario = Box::new(s.scenario.clone());
        // SAFETY: the scenario lives on the heap at a fixed address, is never
        // mutated, and outlives `env` because of the field drop order.
        let sref: &'static Scenario = &*(scenario.as_ref() as *const Scenario);
        match Env::reset(sref, &env_cfg) {
            Ok(env) => {
                *out = Box::into_raw(Box::new(DsEnv {
                    env,
                    scenario,
                    cfg: env_cfg,
                }));
                DsStatus::Ok
            }
            Err(e) => fail(DsStatus::Simulation, e.to_string()),
        }
    })
}

/// # Safety
/// `env` must be null or a handle from `ds_env_new` that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_env_free(env: *mut DsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Restart the episode from the scenario's current frame.
///
/// # Safety
/// `env` must be a live environment handle.
#[no_mangle]
pub unsafe extern "C" fn ds_env_reset(env: *mut DsEnv) -> DsStatus {
    guard(|| {
        let Some(e) = env.as_mut() else {
            return fail(DsStatus::NullPointer, "env is null");
        };
        // SAFETY: as in `ds_env_new`; the boxed scenario is unchanged.
        let sref: &'static Scenario = &*(e.scenario.as_ref() as *const Scenario);
        match Env::reset(sref, &e.cfg) {
            Ok(fresh) => {
                e.env = fresh;
                DsStatus::Ok
            }
            Err(err) => fail(DsStatus::Simulation, err.to_string()),
        }
    })
}

/// # Safety
/// `env` must be a live environment handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_env_ego(env: *const DsEnv, out: *mut DsEgoState) -> DsStatus {
    let (Some(e), false) = (env.as_ref(), out.is_null()) else {
        return fail(DsStatus::NullPointer, "null argument");
    };
    let s = e.env.ego();
    *out = DsEgoState {
        x: s.x,
        y: s.y,
        theta: s.theta,
        v: s.v,
    };
    DsStatus::Ok
}

/// Steps taken so far.
///
/// # Safety
/// `env` must be null or a live environment handle.
#[no_mangle]
pub unsafe extern "C" fn ds_env_step_index(env: *const DsEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.step_index())
}

/// Write the simulator observation into `buf` (length `ds_observation_dim()`).
///
/// # Safety
/// `env` must be a live environment handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_env_observe(env: *const DsEnv, buf: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let (Some(e), false) = (env.as_ref(), buf.is_null()) else {
            return fail(DsStatus::NullPointer, "null argument");
        };
        if len < OBS_DIM {
            return fail(DsStatus::BufferTooSmall, format!("observation needs {OBS_DIM} doubles, got {len}"));
        }
        let obs = StateObserver.observe(&e.env.view());
        std::slice::from_raw_parts_mut(buf, OBS_DIM).copy_from_slice(&obs);
        DsStatus::Ok
    })
}

unsafe fn step_with(env: *mut DsEnv, output: PlannerOutput, out: *mut DsStepResult) -> DsStatus {
    guard(|| {
        let (Some(e), false) = (env.as_mut(), out.is_null()) else {
            return fail(DsStatus::NullPointer, "null argument");
        };
        if e.env.is_done() {
            return fail(DsStatus::EpisodeDone, "episode already finished; call ds_env_reset");
        }
        match e.env.step(&output) {
            Ok(o) => {
                *out = DsStepResult {
                    reward: o.reward,
                    done: o.done as u8,
                    terminal: o.terminal.into(),
                };
                DsStatus::Ok
            }
            Err(err) => fail(DsStatus::Simulation, err.to_string()),
        }
    })
}

/// Apply an (acceleration, steering angle) action.
///
/// # Safety
/// `env` must be a live environment handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_env_step_action(env: *mut DsEnv, accel: f64, steer: f64, out: *mut DsStepResult) -> DsStatus {
    step_with(env, PlannerOutput::Action(Action::new(accel, steer)), out)
}

/// Apply `n` future waypoints at 0.1 s spacing, given as interleaved
/// x, y, heading triples.
///
/// # Safety
/// `env` must be a live environment handle, `xyh` valid for `3 * n` doubles
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_env_step_waypoints(env: *mut DsEnv, xyh: *const f64, n: usize, out: *mut DsStepResult) -> DsStatus {
    if xyh.is_null() || n == 0 {
        return fail(DsStatus::InvalidArgument, "need at least one waypoint");
    }
    let wps = std::slice::from_raw_parts(xyh, 3 * n)
        .chunks_exact(3)
        .map(|p| Waypoint::new(p[0], p[1], p[2]))
        .collect();
    step_with(env, PlannerOutput::Waypoints(wps), out)
}
