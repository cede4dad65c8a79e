//! Scenario data model: agent tracks, lane graph, SDC index and goal.
//!
//! Scenarios are immutable once validated and can be shared read-only across
//! rollout workers.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use crate::geometry::{OrientedBox, Polyline, Vec2};

/// Simulation step in seconds.
pub const DT: f64 = 0.1;
pub const HISTORY_FRAMES: usize = 11;
pub const FUTURE_FRAMES: usize = 80;
pub const TRACK_FRAMES: usize = HISTORY_FRAMES + FUTURE_FRAMES;
/// Index of the "current" frame (end of the 1 s history window).
pub const CURRENT_FRAME: usize = HISTORY_FRAMES - 1;

pub type LaneId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in (-π, π].
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn invalid() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            vx: 0.0,
            vy: 0.0,
            length: 0.0,
            width: 0.0,
            valid: false,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.position(), self.heading, self.length, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Cyclist => "cyclist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(AgentKind::Vehicle),
            "pedestrian" => Some(AgentKind::Pedestrian),
            "cyclist" => Some(AgentKind::Cyclist),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub agent_id: u32,
    pub kind: AgentKind,
    pub states: Vec<AgentState>,
}

impl Track {
    pub fn current(&self) -> &AgentState {
        &self.states[CURRENT_FRAME]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Polyline,
    pub exits: Vec<LaneId>,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneGraph {
    lanes: Vec<Lane>,
    index: BTreeMap<LaneId, usize>,
    road_edges: Vec<Polyline>,
    solid_lines: Vec<Polyline>,
}

impl LaneGraph {
    /// Builds the graph with lanes sorted by id. Validation is separate, see
    /// [`LaneGraph::validate`].
    pub fn new(mut lanes: Vec<Lane>, road_edges: Vec<Polyline>, solid_lines: Vec<Polyline>) -> Self {
        lanes.sort_by_key(|l| l.id);
        let index = lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        Self {
            lanes,
            index,
            road_edges,
            solid_lines,
        }
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.index.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn road_edges(&self) -> &[Polyline] {
        &self.road_edges
    }

    pub fn solid_lines(&self) -> &[Polyline] {
        &self.solid_lines
    }

    /// Nearest lane centerline to `p`, ties broken by lane id.
    pub fn nearest_lane(&self, p: Vec2) -> Option<(LaneId, crate::geometry::Projection)> {
        let mut best: Option<(LaneId, crate::geometry::Projection)> = None;
        for lane in &self.lanes {
            let proj = lane.centerline.project(p);
            if best.as_ref().is_none_or(|(_, b)| proj.distance < b.distance) {
                best = Some((lane.id, proj));
            }
        }
        best
    }

    /// Axis-aligned bounds of all map geometry: (min, max).
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let all = self
            .lanes
            .iter()
            .map(|l| &l.centerline)
            .chain(&self.road_edges)
            .chain(&self.solid_lines);
        for pl in all {
            for p in pl.points() {
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut seen = BTreeSet::new();
        for (i, lane) in self.lanes.iter().enumerate() {
            let field = |f: &str| format!("lane[{}].{}", lane.id, f);
            if !seen.insert(lane.id) {
                return Err(ValidationError::new(format!("lane[{i}].lane_id"), "duplicate lane id"));
            }
            let pts = lane.centerline.points();
            if pts.len() < 2 {
                return Err(ValidationError::new(field("centerline"), "needs at least 2 points"));
            }
            if let Some(k) = pts.iter().position(|p| !p.is_finite()) {
                return Err(ValidationError::new(field(&format!("centerline[{k}]")), "non-finite coordinate"));
            }
            if let Some(k) = pts.windows(2).position(|w| w[0] == w[1]) {
                return Err(ValidationError::new(field(&format!("centerline[{k}]")), "zero-length segment"));
            }
            if !(lane.speed_limit.is_finite() && lane.speed_limit > 0.0) {
                return Err(ValidationError::new(field("speed_limit"), "must be positive and finite"));
            }
            for (k, exit) in lane.exits.iter().enumerate() {
                if self.lane(*exit).is_none() {
                    return Err(ValidationError::new(field(&format!("exits[{k}]")), format!("unknown lane {exit}")));
                }
            }
            for (name, nb) in [("left_neighbor", lane.left_neighbor), ("right_neighbor", lane.right_neighbor)] {
                if let Some(nb) = nb {
                    if self.lane(nb).is_none() {
                        return Err(ValidationError::new(field(name), format!("unknown lane {nb}")));
                    }
                }
            }
        }
        for (kind, lines) in [("road_edge", &self.road_edges), ("solid_line", &self.solid_lines)] {
            for (i, pl) in lines.iter().enumerate() {
                if pl.len() < 2 {
                    return Err(ValidationError::new(format!("{kind}[{i}]"), "needs at least 2 points"));
                }
                if let Some(k) = pl.points().iter().position(|p| !p.is_finite()) {
                    return Err(ValidationError::new(format!("{kind}[{i}].points[{k}]"), "non-finite coordinate"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    pub tracks: Vec<Track>,
    pub sdc_index: usize,
    pub lane_graph: LaneGraph,
    pub goal: Vec2,
    /// Arc length along the logged SDC trajectory from the current frame to
    /// the goal.
    pub s2g_dist: f64,
}

impl Scenario {
    pub fn sdc(&self) -> &Track {
        &self.tracks[self.sdc_index]
    }

    /// Same scenario with a different goal and id.
    pub fn with_goal(&self, id: impl Into<String>, goal: Vec2) -> Scenario {
        Scenario {
            id: id.into(),
            goal,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::new("scenario_id", "must not be empty"));
        }
        if (self.dt - DT).abs() > 1e-12 {
            return Err(ValidationError::new("dt", format!("expected {DT}, found {}", self.dt)));
        }
        if self.tracks.is_empty() {
            return Err(ValidationError::new("tracks", "at least one track (the SDC) required"));
        }
        let mut ids = BTreeSet::new();
        for (i, track) in self.tracks.iter().enumerate() {
            if !ids.insert(track.agent_id) {
                return Err(ValidationError::new(format!("track[{i}].agent_id"), "duplicate agent id"));
            }
            validate_track(i, track)?;
        }
        if self.sdc_index >= self.tracks.len() {
            return Err(ValidationError::new(
                "sdc_index",
                format!("{} out of range for {} tracks", self.sdc_index, self.tracks.len()),
            ));
        }
        if !self.sdc().current().valid {
            return Err(ValidationError::new(
                format!("track[{}].states[{CURRENT_FRAME}].valid", self.sdc_index),
                "SDC must be valid at the current frame",
            ));
        }
        if !self.goal.is_finite() {
            return Err(ValidationError::new("goal", "non-finite coordinate"));
        }
        if !(self.s2g_dist.is_finite() && self.s2g_dist >= 0.0) {
            return Err(ValidationError::new("s2g_dist", "must be finite and non-negative"));
        }
        self.lane_graph.validate()
    }
}

fn validate_track(i: usize, track: &Track) -> Result<(), ValidationError> {
    if track.states.len() != TRACK_FRAMES {
        return Err(ValidationError::new(
            format!("track[{i}].states"),
            format!("expected {TRACK_FRAMES} frames, found {}", track.states.len()),
        ));
    }
    for (f, s) in track.states.iter().enumerate() {
        let field = |name: &str| format!("track[{i}].states[{f}].{name}");
        for (name, v) in [
            ("x", s.x),
            ("y", s.y),
            ("heading", s.heading),
            ("vx", s.vx),
            ("vy", s.vy),
            ("length", s.length),
            ("width", s.width),
        ] {
            if !v.is_finite() {
                return Err(ValidationError::new(field(name), format!("non-finite value {v} at frame {f}")));
            }
        }
        if !(s.heading > -PI && s.heading <= PI) {
            return Err(ValidationError::new(field("heading"), format!("{} outside (-pi, pi] at frame {f}", s.heading)));
        }
        if s.valid && !(s.length > 0.0 && s.width > 0.0) {
            return Err(ValidationError::new(field("length"), format!("extents must be positive at frame {f}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid {field}: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

impl ValidationError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Arc length travelled along the valid frames of a track between two frames.
pub fn logged_arc_length(track: &Track, from: usize, to: usize) -> f64 {
    let pts: Vec<Vec2> = track.states[from..=to]
        .iter()
        .filter(|s| s.valid)
        .map(AgentState::position)
        .collect();
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}
