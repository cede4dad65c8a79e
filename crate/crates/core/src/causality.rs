//! Goal augmentation over the lane graph.
//!
//! From the SDC position at the current frame, a cost-bounded depth-first
//! search enumerates lane sequences built from four maneuvers (lane change,
//! turn left, turn right, go straight). Each sequence long enough to cover
//! the logged start-to-goal arc length yields one candidate goal at exactly
//! that arc length; near-duplicate candidates are then removed by greedy
//! non-maximum suppression. The original logged goal is always kept.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scenario::{LaneGraph, LaneId, Scenario, CURRENT_FRAME};

/// Net heading change separating turns from going straight.
pub const TURN_THRESHOLD: f64 = 30.0 * std::f64::consts::PI / 180.0;
/// Maximum distance from a lane centerline for the start position.
pub const MAX_START_OFFSET: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Maneuver {
    #[serde(rename = "LC")]
    LaneChange,
    #[serde(rename = "TL")]
    TurnLeft,
    #[serde(rename = "TR")]
    TurnRight,
    #[serde(rename = "Go")]
    Go,
}

impl Maneuver {
    pub fn code(self) -> &'static str {
        match self {
            Maneuver::LaneChange => "LC",
            Maneuver::TurnLeft => "TL",
            Maneuver::TurnRight => "TR",
            Maneuver::Go => "Go",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionCostTable {
    pub lane_change: f64,
    pub turn_left: f64,
    pub turn_right: f64,
    pub go: f64,
    pub max_cost: f64,
    pub nms_radius: f64,
}

impl Default for ActionCostTable {
    fn default() -> Self {
        Self {
            lane_change: 5.0,
            turn_left: 1.0,
            turn_right: 1.0,
            go: 1.0,
            max_cost: 10.0,
            nms_radius: 2.5,
        }
    }
}

impl ActionCostTable {
    pub fn cost(&self, m: Maneuver) -> f64 {
        match m {
            Maneuver::LaneChange => self.lane_change,
            Maneuver::TurnLeft => self.turn_left,
            Maneuver::TurnRight => self.turn_right,
            Maneuver::Go => self.go,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let costs = [self.lane_change, self.turn_left, self.turn_right, self.go];
        if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err("maneuver costs must be positive".into());
        }
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        if self.max_cost.is_nan() || self.max_cost < min {
            return Err(format!("max_cost {} below the cheapest maneuver {min}", self.max_cost));
        }
        if !(self.nms_radius.is_finite() && self.nms_radius >= 0.0) {
            return Err("nms_radius must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CausalityError {
    #[error("lane {from} does not connect to lane {to}")]
    NotConnected { from: LaneId, to: LaneId },
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("start position ({x:.2}, {y:.2}) is more than {MAX_START_OFFSET} m from every lane")]
    OffLane { x: f64, y: f64 },
    #[error("start-to-goal distance must be positive, got {0}")]
    BadDistance(f64),
}

/// Label a lane-to-lane transition.
pub fn classify_transition(from: LaneId, to: LaneId, graph: &LaneGraph) -> Result<Maneuver, CausalityError> {
    let lane = graph.lane(from).ok_or(CausalityError::UnknownLane(from))?;
    if lane.left_neighbor == Some(to) || lane.right_neighbor == Some(to) {
        return Ok(Maneuver::LaneChange);
    }
    if !lane.exits.contains(&to) {
        return Err(CausalityError::NotConnected { from, to });
    }
    let target = graph.lane(to).ok_or(CausalityError::UnknownLane(to))?;
    let turn = target.centerline.net_heading_change();
    Ok(if turn > TURN_THRESHOLD {
        Maneuver::TurnLeft
    } else if turn < -TURN_THRESHOLD {
        Maneuver::TurnRight
    } else {
        Maneuver::Go
    })
}

/// Position on the lane graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneLocation {
    pub lane: LaneId,
    /// Arc length along the lane centerline.
    pub offset: f64,
}

/// Project a point onto the nearest lane centerline.
pub fn locate(graph: &LaneGraph, p: Vec2) -> Result<LaneLocation, CausalityError> {
    match graph.nearest_lane(p) {
        Some((lane, proj)) if proj.distance <= MAX_START_OFFSET => Ok(LaneLocation { lane, offset: proj.arc }),
        _ => Err(CausalityError::OffLane { x: p.x, y: p.y }),
    }
}

/// Lanes reachable in one maneuver, in ascending lane-id order.
pub fn successors(graph: &LaneGraph, lane: LaneId) -> Vec<(LaneId, Maneuver)> {
    let Some(l) = graph.lane(lane) else {
        return Vec::new();
    };
    let targets: BTreeSet<LaneId> = l
        .exits
        .iter()
        .copied()
        .chain(l.left_neighbor)
        .chain(l.right_neighbor)
        .collect();
    targets
        .into_iter()
        .filter_map(|t| classify_transition(lane, t, graph).ok().map(|m| (t, m)))
        .collect()
}

/// A lane sequence with its maneuvers, cost and centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePath {
    pub lanes: Vec<LaneId>,
    /// Entry arc length into each lane.
    pub entry_offsets: Vec<f64>,
    pub maneuvers: Vec<Maneuver>,
    pub cost: f64,
    pub points: Vec<Vec2>,
    /// Cumulative arc length per point; lane-change jumps add nothing.
    pub arc: Vec<f64>,
}

impl LanePath {
    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    /// Point at arc length `s` (clamped), interpolating linearly.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let n = self.points.len();
        if n == 1 || s <= 0.0 {
            return self.points[0];
        }
        for i in 0..n - 1 {
            let (a0, a1) = (self.arc[i], self.arc[i + 1]);
            if a1 > a0 && s >= a0 && s <= a1 {
                let t = (s - a0) / (a1 - a0);
                return self.points[i].lerp(self.points[i + 1], t);
            }
        }
        self.points[n - 1]
    }
}

/// Distance covered along a lane sequence: every lane runs from its entry to
/// its end, except lanes left by a lane change, which contribute nothing.
fn build_path(graph: &LaneGraph, lanes: &[LaneId], offsets: &[f64], maneuvers: &[Maneuver], cost: f64) -> LanePath {
    let mut points: Vec<Vec2> = Vec::new();
    let mut arc: Vec<f64> = Vec::new();
    for (i, (&id, &entry)) in lanes.iter().zip(offsets).enumerate() {
        let leaves_by_lc = maneuvers.get(i) == Some(&Maneuver::LaneChange);
        let centerline = &graph.lane(id).expect("path lanes exist").centerline;
        let exit = if leaves_by_lc { entry } else { centerline.length() };
        let piece = if exit > entry {
            centerline.slice(entry, exit)
        } else {
            vec![centerline.point_at(entry)]
        };
        for (k, p) in piece.into_iter().enumerate() {
            match points.last() {
                None => {
                    points.push(p);
                    arc.push(0.0);
                }
                Some(&q) => {
                    let base = *arc.last().unwrap();
                    // the first point of a new lane is joined without consuming distance
                    let ds = if k == 0 { 0.0 } else { p.dist(q) };
                    if k == 0 && p == q {
                        continue;
                    }
                    if k > 0 && ds == 0.0 {
                        continue;
                    }
                    points.push(p);
                    arc.push(base + ds);
                }
            }
        }
    }
    LanePath {
        lanes: lanes.to_vec(),
        entry_offsets: offsets.to_vec(),
        maneuvers: maneuvers.to_vec(),
        cost,
        points,
        arc,
    }
}

/// Remaining length of a partial path: like [`LanePath::length`] but without
/// materializing points.
fn path_length(graph: &LaneGraph, lanes: &[LaneId], offsets: &[f64], maneuvers: &[Maneuver]) -> f64 {
    lanes
        .iter()
        .zip(offsets)
        .enumerate()
        .map(|(i, (&id, &entry))| {
            if maneuvers.get(i) == Some(&Maneuver::LaneChange) {
                0.0
            } else {
                (graph.lane(id).map_or(0.0, |l| l.centerline.length()) - entry).max(0.0)
            }
        })
        .sum()
}

/// Entry offset into `to` when arriving from `from` at `offset` via `m`.
pub fn entry_offset(graph: &LaneGraph, from: LaneId, offset: f64, to: LaneId, m: Maneuver) -> f64 {
    match m {
        Maneuver::LaneChange => {
            let p = graph.lane(from).expect("lane exists").centerline.point_at(offset);
            graph.lane(to).expect("lane exists").centerline.project(p).arc
        }
        _ => 0.0,
    }
}

struct Search<'a> {
    graph: &'a LaneGraph,
    s2g: f64,
    costs: &'a ActionCostTable,
    lanes: Vec<LaneId>,
    offsets: Vec<f64>,
    maneuvers: Vec<Maneuver>,
    out: Vec<LanePath>,
}

impl Search<'_> {
    fn visit(&mut self, cost: f64) {
        if path_length(self.graph, &self.lanes, &self.offsets, &self.maneuvers) > self.s2g {
            if cost <= self.costs.max_cost {
                let p = build_path(self.graph, &self.lanes, &self.offsets, &self.maneuvers, cost);
                self.out.push(p);
            }
            return;
        }
        let current = *self.lanes.last().expect("non-empty path");
        let offset = *self.offsets.last().expect("non-empty path");
        for (next, m) in successors(self.graph, current) {
            let new_cost = cost + self.costs.cost(m);
            // costs are positive, so an over-budget prefix can never be recorded
            if new_cost > self.costs.max_cost || self.lanes.contains(&next) {
                continue;
            }
            let entry = entry_offset(self.graph, current, offset, next, m);
            self.lanes.push(next);
            self.offsets.push(entry);
            self.maneuvers.push(m);
            self.visit(new_cost);
            self.lanes.pop();
            self.offsets.pop();
            self.maneuvers.pop();
        }
    }
}

/// Cost-bounded DFS for lane sequences covering more than `s2g_dist`.
pub fn search_paths(
    graph: &LaneGraph,
    start: LaneLocation,
    s2g_dist: f64,
    costs: &ActionCostTable,
) -> Result<Vec<LanePath>, CausalityError> {
    if graph.lane(start.lane).is_none() {
        return Err(CausalityError::UnknownLane(start.lane));
    }
    if !(s2g_dist.is_finite() && s2g_dist > 0.0) {
        return Err(CausalityError::BadDistance(s2g_dist));
    }
    let mut search = Search {
        graph,
        s2g: s2g_dist,
        costs,
        lanes: vec![start.lane],
        offsets: vec![start.offset],
        maneuvers: Vec::new(),
        out: Vec::new(),
    };
    search.visit(0.0);
    Ok(search.out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCandidate {
    pub point: Vec2,
    pub cost: f64,
    pub lanes: Vec<LaneId>,
    pub maneuvers: Vec<Maneuver>,
    /// The logged goal of the source scenario.
    pub original: bool,
}

/// One candidate per path at arc length `s2g_dist`.
pub fn goals_from_paths(paths: &[LanePath], s2g_dist: f64) -> Vec<GoalCandidate> {
    paths
        .iter()
        .map(|p| GoalCandidate {
            point: p.point_at(s2g_dist),
            cost: p.cost,
            lanes: p.lanes.clone(),
            maneuvers: p.maneuvers.clone(),
            original: false,
        })
        .collect()
}

/// Keep order: original goal first, then ascending cost, then lane ids.
fn keep_order(a: &GoalCandidate, b: &GoalCandidate) -> Ordering {
    b.original
        .cmp(&a.original)
        .then(a.cost.total_cmp(&b.cost))
        .then_with(|| a.lanes.cmp(&b.lanes))
}

/// Greedy suppression: a candidate survives if it is at least `radius` from
/// every previously kept one.
pub fn nms_goals(candidates: &[GoalCandidate], radius: f64) -> Vec<GoalCandidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(keep_order);
    let mut kept: Vec<GoalCandidate> = Vec::new();
    for c in sorted {
        if kept.iter().all(|k| k.point.dist(c.point) >= radius) {
            kept.push(c);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    pub scenario_id: String,
    pub goals: Vec<GoalCandidate>,
}

/// Full goal augmentation for one scenario. The original logged goal is
/// prepended with cost 0 and is never suppressed.
pub fn generate_goals(sc: &Scenario, costs: &ActionCostTable) -> Result<GoalSet, CausalityError> {
    let start = locate(&sc.lane_graph, sc.sdc().states[CURRENT_FRAME].position())?;
    let paths = search_paths(&sc.lane_graph, start, sc.s2g_dist, costs)?;
    let mut candidates = vec![GoalCandidate {
        point: sc.goal,
        cost: 0.0,
        lanes: Vec::new(),
        maneuvers: Vec::new(),
        original: true,
    }];
    candidates.extend(goals_from_paths(&paths, sc.s2g_dist));
    Ok(GoalSet {
        scenario_id: sc.id.clone(),
        goals: nms_goals(&candidates, costs.nms_radius),
    })
}

/// One scenario per goal, ids suffixed `-g<k>` (k = 0 is the original).
pub fn augment_scenario(sc: &Scenario, costs: &ActionCostTable) -> Result<Vec<Scenario>, CausalityError> {
    let set = generate_goals(sc, costs)?;
    Ok(set
        .goals
        .iter()
        .enumerate()
        .map(|(k, g)| sc.with_goal(format!("{}-g{k}", sc.id), g.point))
        .collect())
}
