//! Per-step signals, the five-term reward, and episode classification.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleParams;
use crate::geometry::{signed_boundary_distance, OrientedBox, Vec2};
use crate::scenario::LaneGraph;

/// Goal radius for completion, meters.
pub const COMPLETION_RADIUS: f64 = 2.0;
/// Smoothness thresholds on consecutive-action differences.
pub const SMOOTH_ACCEL_THRESHOLD: f64 = 1.5;
pub const SMOOTH_TURNING_THRESHOLD: f64 = 0.1;
pub const COMPLETION_REWARD: f64 = 10.0;

/// Weights for the offroad, collision and progress terms. Smoothness and
/// completion always enter with weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub offroad: f64,
    pub collision: f64,
    pub progress: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            offroad: 1.0,
            collision: 1.0,
            progress: 10.0,
        }
    }
}

impl RewardWeights {
    pub fn new(offroad: f64, collision: f64, progress: f64) -> Self {
        Self {
            offroad,
            collision,
            progress,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if [self.offroad, self.collision, self.progress]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(format!("reward weights must be non-negative, got {self:?}"))
        }
    }

    /// Parse `"o,c,p"`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected three comma-separated weights, got {s:?}"));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse::<f64>().map_err(|e| format!("bad weight {p:?}: {e}"))?;
            if !(slot.is_finite() && *slot >= 0.0) {
                return Err(format!("weights must be non-negative, got {p}"));
            }
        }
        Ok(Self::new(v[0], v[1], v[2]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSignals {
    /// Gap to the nearest other box; <= 0 means penetration, +inf when alone.
    #[serde(with = "crate::serde_f64")]
    pub d_collision: f64,
    /// Signed distance to road edges / solid lines; negative on-road.
    #[serde(with = "crate::serde_f64")]
    pub d_offroad: f64,
    /// Decrease in goal distance over this step.
    pub d_progress: f64,
    pub delta_accel: f64,
    pub delta_turning: f64,
    pub is_goal: bool,
}

impl StepSignals {
    pub fn collided(&self) -> bool {
        self.d_collision <= 0.0
    }

    pub fn offroad(&self) -> bool {
        self.d_offroad > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub collision: f64,
    pub offroad: f64,
    pub progress: f64,
    pub smoothness: f64,
    pub completion: f64,
    pub total: f64,
}

pub fn step_reward(s: &StepSignals, w: &RewardWeights) -> RewardBreakdown {
    let collision = (s.d_collision - 1.0).min(0.0);
    let offroad = (-1.0 - s.d_offroad).clamp(-2.0, 0.0);
    let progress = (s.d_progress - 0.1).clamp(-2.0, 1.0);
    let rough = s.delta_accel > SMOOTH_ACCEL_THRESHOLD || s.delta_turning > SMOOTH_TURNING_THRESHOLD;
    let smoothness = if rough { -0.5 } else { 0.0 };
    let completion = if s.is_goal { COMPLETION_REWARD } else { 0.0 };
    let total = w.collision * collision + w.offroad * offroad + w.progress * progress + smoothness + completion;
    RewardBreakdown {
        collision,
        offroad,
        progress,
        smoothness,
        completion,
        total,
    }
}

/// Minimum separation between `ego` and any of `others`.
pub fn collision_gap(ego: &OrientedBox, others: &[OrientedBox]) -> f64 {
    others.iter().map(|o| ego.gap(o)).fold(f64::INFINITY, f64::min)
}

/// Signed distance to the nearest road edge alone; positive when off-road.
pub fn road_edge_distance(pos: Vec2, graph: &LaneGraph) -> f64 {
    let mut best = f64::INFINITY;
    for edge in graph.road_edges() {
        let d = signed_boundary_distance(pos, edge);
        if d.abs() < best.abs() {
            best = d;
        }
    }
    if best.is_infinite() {
        f64::NEG_INFINITY
    } else {
        best
    }
}

/// Distance to the nearest road edge or solid line, negative on-road and
/// positive off-road. On/off-road is decided by the road edges.
pub fn offroad_distance(pos: Vec2, graph: &LaneGraph) -> f64 {
    let edge = road_edge_distance(pos, graph);
    let solid = graph
        .solid_lines()
        .iter()
        .map(|l| l.project(pos).distance)
        .fold(f64::INFINITY, f64::min);
    let magnitude = edge.abs().min(solid);
    if edge > 0.0 {
        magnitude
    } else {
        -magnitude
    }
}

/// "Uncomfort" event: acceleration beyond the vehicle's limit.
pub fn is_uncomfortable(accel: f64, params: &VehicleParams) -> bool {
    accel.abs() > params.max_accel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TerminalClass {
    Completed,
    Collided,
    Offroad,
    Stuck,
}

impl TerminalClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalClass::Completed => "completed",
            TerminalClass::Collided => "collided",
            TerminalClass::Offroad => "offroad",
            TerminalClass::Stuck => "stuck",
        }
    }
}

/// First-match classification: collision, then offroad, then completion,
/// else stuck.
pub fn classify_episode(log: &[StepSignals], final_position: Vec2, goal: Vec2) -> TerminalClass {
    if log.iter().any(StepSignals::collided) {
        TerminalClass::Collided
    } else if log.iter().any(StepSignals::offroad) {
        TerminalClass::Offroad
    } else if log.iter().any(|s| s.is_goal) || final_position.dist(goal) < COMPLETION_RADIUS {
        TerminalClass::Completed
    } else {
        TerminalClass::Stuck
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenarios: usize,
    pub completion: f64,
    pub collision: f64,
    pub offroad: f64,
    pub stuck: f64,
}

impl MetricsReport {
    /// Fractions of each terminal class; `None` for an empty set.
    pub fn from_classes(classes: &[TerminalClass]) -> Option<Self> {
        if classes.is_empty() {
            return None;
        }
        let n = classes.len();
        let frac = |c: TerminalClass| classes.iter().filter(|&&k| k == c).count() as f64 / n as f64;
        Some(Self {
            scenarios: n,
            completion: frac(TerminalClass::Completed),
            collision: frac(TerminalClass::Collided),
            offroad: frac(TerminalClass::Offroad),
            stuck: frac(TerminalClass::Stuck),
        })
    }

    pub fn sum(&self) -> f64 {
        self.completion + self.collision + self.offroad + self.stuck
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::scenario::Lane;
    use proptest::prelude::*;

    fn quiet() -> StepSignals {
        StepSignals {
            d_collision: f64::INFINITY,
            d_offroad: -5.0,
            d_progress: 0.0,
            delta_accel: 0.0,
            delta_turning: 0.0,
            is_goal: false,
        }
    }

    #[test]
    fn reward_terms() {
        let w = RewardWeights::new(1.0, 1.0, 1.0);
        let r = step_reward(&StepSignals { d_collision: 0.5, ..quiet() }, &w);
        assert_eq!(r.collision, -0.5);
        assert_eq!(step_reward(&StepSignals { d_offroad: -3.0, ..quiet() }, &w).offroad, 0.0);
        assert_eq!(step_reward(&StepSignals { d_offroad: 2.0, ..quiet() }, &w).offroad, -2.0);
        assert_eq!(step_reward(&StepSignals { delta_accel: 2.0, ..quiet() }, &w).smoothness, -0.5);
        assert_eq!(step_reward(&quiet(), &w).smoothness, 0.0);
        assert_eq!(step_reward(&StepSignals { is_goal: true, ..quiet() }, &w).completion, 10.0);
    }

    #[test]
    fn classification_priority() {
        let goal = Vec2::new(0.0, 0.0);
        let clean = vec![quiet(); 50];
        assert_eq!(classify_episode(&clean, Vec2::new(1.5, 0.0), goal), TerminalClass::Completed);
        assert_eq!(classify_episode(&clean, Vec2::new(30.0, 0.0), goal), TerminalClass::Stuck);
        let mut hit = clean.clone();
        hit[40].d_collision = -0.1;
        hit[41].d_offroad = 1.0;
        assert_eq!(classify_episode(&hit, Vec2::new(1.5, 0.0), goal), TerminalClass::Collided);
        let mut off = clean;
        off[10].d_offroad = 0.2;
        assert_eq!(classify_episode(&off, Vec2::new(1.5, 0.0), goal), TerminalClass::Offroad);
    }

    #[test]
    fn offroad_sign_and_boundary() {
        let graph = LaneGraph::new(
            vec![Lane {
                id: 0,
                centerline: Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]),
                exits: vec![],
                left_neighbor: None,
                right_neighbor: None,
                speed_limit: 10.0,
            }],
            vec![
                Polyline::new(vec![Vec2::new(0.0, -2.0), Vec2::new(100.0, -2.0)]),
                Polyline::new(vec![Vec2::new(100.0, 2.0), Vec2::new(0.0, 2.0)]),
            ],
            vec![],
        );
        assert_eq!(offroad_distance(Vec2::new(50.0, 0.0), &graph), -2.0);
        assert_eq!(offroad_distance(Vec2::new(50.0, -2.0), &graph), 0.0);
        assert_eq!(offroad_distance(Vec2::new(50.0, 3.0), &graph), 1.0);
    }

    #[test]
    fn uncomfort_threshold() {
        let p = VehicleParams::default();
        assert!(!is_uncomfortable(6.0, &p));
        assert!(is_uncomfortable(6.01, &p));
        assert!(is_uncomfortable(-7.0, &p));
    }

    #[test]
    fn empty_report_is_none() {
        assert!(MetricsReport::from_classes(&[]).is_none());
    }

    proptest! {
        #[test]
        fn breakdown_sums_to_total(
            dc in -5.0..5.0f64, dof in -5.0..5.0f64, dp in -3.0..3.0f64,
            da in 0.0..3.0f64, dt in 0.0..0.3f64, goal: bool,
            wo in 0.0..10.0f64, wc in 0.0..10.0f64, wp in 0.0..10.0f64,
        ) {
            let s = StepSignals { d_collision: dc, d_offroad: dof, d_progress: dp, delta_accel: da, delta_turning: dt, is_goal: goal };
            let w = RewardWeights::new(wo, wc, wp);
            let r = step_reward(&s, &w);
            let sum = wc * r.collision + wo * r.offroad + wp * r.progress + r.smoothness + r.completion;
            prop_assert_eq!(sum, r.total);
            prop_assert!(r.collision <= 0.0 && r.offroad >= -2.0 && r.offroad <= 0.0);
            prop_assert!(r.progress >= -2.0 && r.progress <= 1.0);
        }

        #[test]
        fn report_fractions_sum_to_one(classes in proptest::collection::vec(0u8..4, 1..200)) {
            let classes: Vec<TerminalClass> = classes.into_iter().map(|c| match c {
                0 => TerminalClass::Completed, 1 => TerminalClass::Collided,
                2 => TerminalClass::Offroad, _ => TerminalClass::Stuck,
            }).collect();
            let r = MetricsReport::from_classes(&classes).unwrap();
            prop_assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }
}
