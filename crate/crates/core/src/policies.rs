//! Built-in planners behind one interface: expert replay, a scripted
//! lane-follow planner, a constant-velocity extrapolator, an open-loop
//! wrapper, plus the IDM car-following law used for NPCs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::causality::{locate, search_paths, ActionCostTable, LanePath};
use crate::dynamics::{Action, Waypoint};
use crate::env::SimulatorView;
use crate::geometry::{angle_diff, wrap_angle, Polyline, Vec2};
use crate::scenario::{LaneGraph, Scenario, Track, DT, TRACK_FRAMES};

/// Fallback desired speed when no lane is close enough to read a limit.
pub const DEFAULT_DESIRED_SPEED: f64 = 15.0;
/// Agents further than this from a path are never treated as its leader.
pub const LEADER_LATERAL_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlannerOutput {
    /// Poses at 0.1 s spacing, starting one step ahead.
    Waypoints(Vec<Waypoint>),
    Action(Action),
}

impl PlannerOutput {
    pub fn is_finite(&self) -> bool {
        match self {
            PlannerOutput::Waypoints(w) => !w.is_empty() && w.iter().all(Waypoint::is_finite),
            PlannerOutput::Action(a) => a.accel.is_finite() && a.steer.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("agent {agent_id} has no valid log at frame {frame}")]
    AgentRemoved { agent_id: u32, frame: usize },
    #[error("unroutable: {0}")]
    Unroutable(String),
    #[error("planner produced a non-finite output at step {step}")]
    NonFinite { step: usize },
    #[error("{0}")]
    Other(String),
}

pub trait Planner {
    /// Plan from the current view. In waypoint mode the output holds at
    /// least `horizon` poses.
    fn plan(&mut self, view: &SimulatorView, horizon: usize) -> Result<PlannerOutput, PolicyError>;
}

/// Builds one planner per episode. Shared read-only across workers.
pub trait PlannerFactory: Sync {
    fn build<'a>(&'a self, scenario: &'a Scenario, seed: u64) -> Box<dyn Planner + 'a>;
}

/// Logged poses of `track` for frames `frame+1 ..= frame+horizon`. Past the
/// end of the log the final pose is repeated.
pub fn expert_waypoints(track: &Track, frame: usize, horizon: usize) -> Result<Vec<Waypoint>, PolicyError> {
    let last = TRACK_FRAMES - 1;
    (1..=horizon)
        .map(|k| {
            let f = (frame + k).min(last);
            let s = &track.states[f];
            if s.valid {
                Ok(Waypoint::new(s.x, s.y, s.heading))
            } else {
                Err(PolicyError::AgentRemoved {
                    agent_id: track.agent_id,
                    frame: f,
                })
            }
        })
        .collect()
}

/// Replays the SDC log.
pub struct Expert<'a> {
    track: &'a Track,
}

impl<'a> Expert<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self { track: scenario.sdc() }
    }
}

impl Planner for Expert<'_> {
    fn plan(&mut self, view: &SimulatorView, horizon: usize) -> Result<PlannerOutput, PolicyError> {
        expert_waypoints(self.track, view.frame(), horizon).map(PlannerOutput::Waypoints)
    }
}

/// Extrapolates the current heading and speed; ignores the goal entirely.
pub struct ConstantVelocity;

impl Planner for ConstantVelocity {
    fn plan(&mut self, view: &SimulatorView, horizon: usize) -> Result<PlannerOutput, PolicyError> {
        let e = view.ego;
        let dir = Vec2::from_angle(e.theta);
        Ok(PlannerOutput::Waypoints(
            (1..=horizon)
                .map(|k| {
                    let p = e.position() + dir * (e.v * DT * k as f64);
                    Waypoint::new(p.x, p.y, e.theta)
                })
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub exponent: f64,
    /// Lower clamp on the returned acceleration (emergency braking).
    pub hard_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: DEFAULT_DESIRED_SPEED,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 1.5,
            comfortable_decel: 1.67,
            exponent: 4.0,
            hard_decel: 9.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfortable_decel", self.comfortable_decel),
            ("exponent", self.exponent),
            ("hard_decel", self.hard_decel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("idm.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn with_desired_speed(self, v0: f64) -> Self {
        Self {
            desired_speed: v0,
            ..self
        }
    }
}

/// IDM acceleration for speed `v`, bumper gap `gap` (use `f64::INFINITY` on a
/// free road) and approach rate `dv = v - v_leader`.
pub fn idm_accel(v: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.desired_speed).powf(p.exponent);
    let interaction = if gap.is_infinite() {
        0.0
    } else if gap <= 0.0 {
        return -p.hard_decel;
    } else {
        let dynamic = v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
        let s_star = p.min_gap + dynamic.max(0.0);
        (s_star / gap).powi(2)
    };
    (p.max_accel * (free - interaction)).clamp(-p.hard_decel, p.max_accel)
}

/// Speed limit of the lane nearest to `p`, or the fallback.
pub fn lane_speed_limit(graph: &LaneGraph, p: Vec2) -> f64 {
    match graph.nearest_lane(p) {
        Some((id, proj)) if proj.distance <= crate::causality::MAX_START_OFFSET => {
            graph.lane(id).map_or(DEFAULT_DESIRED_SPEED, |l| l.speed_limit)
        }
        _ => DEFAULT_DESIRED_SPEED,
    }
}

/// An obstacle as seen from a path: position, heading, speed, length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
}

/// Nearest obstacle ahead of arc `s` on `path` within the lateral limit.
/// Returns (bumper gap, leader speed along the path).
pub fn find_leader(path: &Polyline, s: f64, own_length: f64, obstacles: &[Obstacle]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for o in obstacles {
        let proj = path.project(o.position);
        // projections clamped to the path end are not "ahead on the path"
        if proj.distance > LEADER_LATERAL_LIMIT || proj.arc <= s {
            continue;
        }
        let gap = proj.arc - s - 0.5 * (own_length + o.length);
        let along = o.speed * angle_diff(o.heading, path.heading_at(proj.arc)).cos();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, along.max(0.0)));
        }
    }
    best
}

/// Longitudinal IDM follower on a fixed path (an NPC's logged geometry).
#[derive(Debug, Clone)]
pub struct IdmFollower {
    pub path: Polyline,
    pub s: f64,
    pub v: f64,
    pub length: f64,
    pub width: f64,
    /// Parked agents keep their pose.
    pub parked: Option<(Vec2, f64)>,
}

/// Paths shorter than this are treated as parked vehicles.
const MIN_PATH_LENGTH: f64 = 0.5;
/// Straight extension appended to logged paths so followers never run out.
const PATH_EXTENSION: f64 = 200.0;

impl IdmFollower {
    /// Follower along the valid logged positions of `track`, starting at
    /// `frame`.
    pub fn from_track(track: &Track, frame: usize) -> Self {
        let cur = &track.states[frame];
        let mut pts: Vec<Vec2> = Vec::new();
        for st in track.states.iter().filter(|s| s.valid) {
            let p = st.position();
            if pts.last().is_none_or(|q| q.dist(p) > 1e-3) {
                pts.push(p);
            }
        }
        let raw = Polyline::new(pts.clone());
        if pts.len() < 2 || raw.length() < MIN_PATH_LENGTH {
            return Self {
                path: raw,
                s: 0.0,
                v: 0.0,
                length: cur.length,
                width: cur.width,
                parked: Some((cur.position(), cur.heading)),
            };
        }
        let end_heading = raw.heading_at(raw.length());
        pts.push(raw.last() + Vec2::from_angle(end_heading) * PATH_EXTENSION);
        let path = Polyline::new(pts);
        let s = path.project(cur.position()).arc;
        Self {
            path,
            s,
            v: cur.speed(),
            length: cur.length,
            width: cur.width,
            parked: None,
        }
    }

    pub fn position(&self) -> Vec2 {
        match self.parked {
            Some((p, _)) => p,
            None => self.path.point_at_extended(self.s),
        }
    }

    pub fn heading(&self) -> f64 {
        match self.parked {
            Some((_, h)) => h,
            None => wrap_angle(self.path.heading_at(self.s)),
        }
    }

    /// Acceleration this step given the obstacles around.
    pub fn accel(&self, graph: &LaneGraph, obstacles: &[Obstacle], params: &IdmParams) -> f64 {
        let v0 = lane_speed_limit(graph, self.position());
        let p = params.with_desired_speed(v0);
        match find_leader(&self.path, self.s, self.length, obstacles) {
            Some((gap, lead_v)) => idm_accel(self.v, gap, self.v - lead_v, &p),
            None => idm_accel(self.v, f64::INFINITY, 0.0, &p),
        }
    }

    /// Ballistic update; speed never goes negative.
    pub fn advance(&mut self, accel: f64, dt: f64) {
        if self.parked.is_some() {
            return;
        }
        let v_next = (self.v + accel * dt).max(0.0);
        let ds = if v_next > 0.0 {
            self.v * dt + 0.5 * accel * dt * dt
        } else if accel < 0.0 {
            // stops within the step
            self.v * self.v / (-2.0 * accel)
        } else {
            0.0
        };
        self.s += ds.max(0.0);
        self.v = v_next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneFollowConfig {
    pub idm: IdmParams,
    pub costs: ActionCostTable,
    /// Maximum distance between the goal and an accepted route.
    pub route_tolerance: f64,
    /// Longitudinal length over which a lane change is blended in.
    pub lane_change_length: f64,
    /// Resampling step of the route polyline.
    pub route_spacing: f64,
    /// Standard deviation of Gaussian noise added to every emitted waypoint
    /// position; models an imperfect learned predictor. Zero disables it.
    pub waypoint_noise: f64,
}

impl Default for LaneFollowConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            costs: ActionCostTable::default(),
            route_tolerance: 2.0,
            lane_change_length: 15.0,
            route_spacing: 0.5,
            waypoint_noise: 0.0,
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Dense, continuous polyline along a lane path; lateral jumps from lane
/// changes are blended in over `blend` meters.
pub fn route_polyline(path: &LanePath, spacing: f64, blend: f64) -> Polyline {
    let mut jumps = Vec::new();
    for i in 0..path.points.len().saturating_sub(1) {
        if path.arc[i + 1] == path.arc[i] && path.points[i + 1] != path.points[i] {
            jumps.push((path.arc[i], path.points[i + 1] - path.points[i]));
        }
    }
    let len = path.length();
    let n = (len / spacing).ceil().max(1.0) as usize;
    let mut pts: Vec<Vec2> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = len * k as f64 / n as f64;
        let mut p = path.point_at(s);
        for &(sj, delta) in &jumps {
            if s > sj && s < sj + blend {
                p = p - delta * (1.0 - smoothstep((s - sj) / blend));
            }
        }
        if pts.last().is_none_or(|q| q.dist(p) > 1e-6) {
            pts.push(p);
        }
    }
    if pts.len() == 1 {
        pts.push(pts[0] + Vec2::new(1e-3, 0.0));
    }
    Polyline::new(pts)
}

/// Lane path from `start` whose centerline passes closest to `goal`.
pub fn plan_route(
    graph: &LaneGraph,
    start: Vec2,
    goal: Vec2,
    s2g_dist: f64,
    cfg: &LaneFollowConfig,
) -> Result<LanePath, PolicyError> {
    let loc = locate(graph, start).map_err(|e| PolicyError::Unroutable(e.to_string()))?;
    let reach = s2g_dist.max(start.dist(goal)).max(1.0);
    let paths = search_paths(graph, loc, reach, &cfg.costs).map_err(|e| PolicyError::Unroutable(e.to_string()))?;
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in paths.iter().enumerate() {
        let d = Polyline::new(p.points.clone()).project(goal).distance;
        let better = match best {
            None => true,
            Some((bd, bi)) => d < bd - 1e-9 || ((d - bd).abs() <= 1e-9 && p.cost < paths[bi].cost),
        };
        if better {
            best = Some((d, i));
        }
    }
    match best {
        Some((d, i)) if d <= cfg.route_tolerance => Ok(paths[i].clone()),
        Some((d, _)) => Err(PolicyError::Unroutable(format!(
            "closest lane path passes {d:.2} m from the goal"
        ))),
        None => Err(PolicyError::Unroutable("no lane path within the cost budget".into())),
    }
}

/// Scripted stand-in for a learned planner: routes over the lane graph to
/// the goal, then emits centerline waypoints at the lane speed limit,
/// slowed by IDM for a leader on the route.
pub struct LaneFollow<'a> {
    scenario: &'a Scenario,
    cfg: LaneFollowConfig,
    route: Option<Polyline>,
    rng: ChaCha8Rng,
}

impl<'a> LaneFollow<'a> {
    pub fn new(scenario: &'a Scenario, cfg: LaneFollowConfig, seed: u64) -> Self {
        Self {
            scenario,
            cfg,
            route: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Planner for LaneFollow<'_> {
    fn plan(&mut self, view: &SimulatorView, horizon: usize) -> Result<PlannerOutput, PolicyError> {
        if self.route.is_none() {
            let path = plan_route(
                &self.scenario.lane_graph,
                view.ego.position(),
                view.goal,
                self.scenario.s2g_dist,
                &self.cfg,
            )?;
            self.route = Some(route_polyline(&path, self.cfg.route_spacing, self.cfg.lane_change_length));
        }
        let route = self.route.as_ref().expect("route set above");
        let ego = view.ego;
        let s0 = route.project(ego.position()).arc;
        let v0 = lane_speed_limit(&self.scenario.lane_graph, ego.position());
        let idm = self.cfg.idm.with_desired_speed(v0);
        let obstacles: Vec<Obstacle> = view
            .agents
            .iter()
            .map(|a| Obstacle {
                position: a.state.position(),
                heading: a.state.heading,
                speed: a.state.speed(),
                length: a.state.length,
            })
            .collect();
        let leader = find_leader(route, s0, view.ego_length, &obstacles);

        let noise = Normal::new(0.0, self.cfg.waypoint_noise.max(0.0)).expect("finite noise scale");
        let mut s = s0;
        let mut v = ego.v;
        let mut out = Vec::with_capacity(horizon);
        for k in 0..horizon {
            // leader assumed to hold its speed over the horizon
            let a = match leader {
                Some((gap, lv)) => {
                    let t = k as f64 * DT;
                    let gap_k = gap + lv * t - (s - s0);
                    idm_accel(v, gap_k, v - lv, &idm)
                }
                None => idm_accel(v, f64::INFINITY, 0.0, &idm),
            };
            v = (v + a * DT).max(0.0);
            s += v * DT;
            let mut p = route.point_at_extended(s);
            if self.cfg.waypoint_noise > 0.0 {
                p = p + Vec2::new(noise.sample(&mut self.rng), noise.sample(&mut self.rng));
            }
            out.push(Waypoint::new(p.x, p.y, wrap_angle(route.heading_at(s))));
        }
        Ok(PlannerOutput::Waypoints(out))
    }
}

/// Asks the inner planner once for the full episode and then replays that
/// prediction by step index, without feedback.
pub struct OpenLoop<'a> {
    inner: Box<dyn Planner + 'a>,
    prediction: Option<Vec<Waypoint>>,
}

/// Length of the single prediction requested by [`OpenLoop`].
pub const OPEN_LOOP_HORIZON: usize = crate::scenario::FUTURE_FRAMES;

impl<'a> OpenLoop<'a> {
    pub fn new(inner: Box<dyn Planner + 'a>) -> Self {
        Self { inner, prediction: None }
    }
}

impl Planner for OpenLoop<'_> {
    fn plan(&mut self, view: &SimulatorView, horizon: usize) -> Result<PlannerOutput, PolicyError> {
        if self.prediction.is_none() {
            match self.inner.plan(view, OPEN_LOOP_HORIZON.max(horizon))? {
                PlannerOutput::Waypoints(w) => self.prediction = Some(w),
                // action planners have nothing to replay
                action => return Ok(action),
            }
        }
        let pred = self.prediction.as_ref().expect("prediction set above");
        let last = *pred.last().ok_or(PolicyError::Other("empty prediction".into()))?;
        Ok(PlannerOutput::Waypoints(
            (0..horizon)
                .map(|k| pred.get(view.step + k).copied().unwrap_or(last))
                .collect(),
        ))
    }
}

/// Index of the candidate whose endpoint is nearest to `goal`; ties go to
/// the lower index. `None` for an empty candidate list.
pub fn goal_selection_nearest(candidates: &[Vec<Waypoint>], goal: Vec2) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(end) = c.last() else { continue };
        let d = end.position().dist(goal);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Named built-in SDC policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdcPolicy {
    Expert,
    LaneFollow(LaneFollowConfig),
    ConstantVelocity,
}

impl SdcPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SdcPolicy::Expert => "expert",
            SdcPolicy::LaneFollow(_) => "lanefollow",
            SdcPolicy::ConstantVelocity => "constvel",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "expert" => Some(SdcPolicy::Expert),
            "lanefollow" => Some(SdcPolicy::LaneFollow(LaneFollowConfig::default())),
            "constvel" => Some(SdcPolicy::ConstantVelocity),
            _ => None,
        }
    }
}

/// Factory for a built-in policy, optionally wrapped open-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinFactory {
    pub policy: SdcPolicy,
    pub open_loop: bool,
}

impl BuiltinFactory {
    pub fn new(policy: SdcPolicy) -> Self {
        Self {
            policy,
            open_loop: false,
        }
    }
}

impl PlannerFactory for BuiltinFactory {
    fn build<'a>(&'a self, scenario: &'a Scenario, seed: u64) -> Box<dyn Planner + 'a> {
        let inner: Box<dyn Planner + 'a> = match &self.policy {
            SdcPolicy::Expert => Box::new(Expert::new(scenario)),
            SdcPolicy::LaneFollow(cfg) => Box::new(LaneFollow::new(scenario, *cfg, seed)),
            SdcPolicy::ConstantVelocity => Box::new(ConstantVelocity),
        };
        if self.open_loop {
            Box::new(OpenLoop::new(inner))
        } else {
            inner
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpcPolicy {
    Expert,
    Idm,
}

impl NpcPolicy {
    pub fn name(self) -> &'static str {
        match self {
            NpcPolicy::Expert => "expert",
            NpcPolicy::Idm => "idm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "expert" => Some(NpcPolicy::Expert),
            "idm" => Some(NpcPolicy::Idm),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idm_free_road_limits() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(0.0, f64::INFINITY, 0.0, &p), p.max_accel);
        assert!(idm_accel(p.desired_speed, f64::INFINITY, 0.0, &p).abs() < 1e-12);
        assert!(idm_accel(20.0, f64::INFINITY, 0.0, &p) < 0.0);
    }

    #[test]
    fn idm_brakes_hard_at_contact() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(5.0, 0.0, 0.0, &p), -p.hard_decel);
        assert_eq!(idm_accel(10.0, 0.5, 10.0, &p), -p.hard_decel);
    }

    #[test]
    fn nearest_goal_selection() {
        let traj = |x: f64| vec![Waypoint::new(0.0, 0.0, 0.0), Waypoint::new(x, 0.0, 0.0)];
        let goal = Vec2::new(10.0, 0.0);
        assert_eq!(goal_selection_nearest(&[traj(7.0)], goal), Some(0));
        assert_eq!(goal_selection_nearest(&[traj(7.0), traj(9.0)], goal), Some(1));
        assert_eq!(goal_selection_nearest(&[traj(8.0), traj(12.0)], goal), Some(0));
        assert_eq!(goal_selection_nearest(&[], goal), None);
    }

    #[test]
    fn leader_must_be_ahead_and_close() {
        let path = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]);
        let ob = |x: f64, y: f64| Obstacle {
            position: Vec2::new(x, y),
            heading: 0.0,
            speed: 3.0,
            length: 4.0,
        };
        assert_eq!(find_leader(&path, 10.0, 4.0, &[ob(5.0, 0.0)]), None);
        assert_eq!(find_leader(&path, 10.0, 4.0, &[ob(30.0, 2.5)]), None);
        let (gap, v) = find_leader(&path, 10.0, 4.0, &[ob(40.0, 0.0), ob(30.0, 1.0)]).unwrap();
        assert!((gap - 16.0).abs() < 1e-12);
        assert!((v - 3.0).abs() < 1e-12);
    }
}
