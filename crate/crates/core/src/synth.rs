//! Synthetic scenario generator over built-in map templates.
//!
//! Every template is right-hand traffic with 3.5 m lanes. Agent logs are
//! constant-speed traversals of lane routes; NPC placements are rejection
//! sampled so that no two logged boxes come within 1 m of each other at any
//! frame, which keeps Expert replay collision-free.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{wrap_angle, Polyline, Vec2};
use crate::scenario::{
    logged_arc_length, AgentKind, AgentState, Lane, LaneGraph, LaneId, Scenario, Track, CURRENT_FRAME, DT,
    TRACK_FRAMES,
};

pub const LANE_WIDTH: f64 = 3.5;
const HALF_LANE: f64 = LANE_WIDTH / 2.0;
/// Distance from the junction center to where arm lanes stop.
const JUNCTION_SETBACK: f64 = 10.0;
const ARM_LENGTH: f64 = 100.0;
const CURB_RADIUS: f64 = JUNCTION_SETBACK - LANE_WIDTH;
const MIN_LOGGED_GAP: f64 = 1.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Straight3Lane,
    TJunction,
    YJunction,
    FourWay,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::Straight3Lane,
        Template::TJunction,
        Template::YJunction,
        Template::FourWay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight3Lane => "straight-3-lane",
            Template::TJunction => "t-junction",
            Template::YJunction => "y-junction",
            Template::FourWay => "4-way-intersection",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SynthError> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| SynthError::UnknownTemplate(name.to_string()))
    }
}

/// Synthetic-map descriptor: template name plus NPC count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub template: String,
    pub npcs: usize,
}

impl SynthSpec {
    pub fn new(template: impl Into<String>, npcs: usize) -> Self {
        Self {
            template: template.into(),
            npcs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("unknown map template {0:?} (expected one of straight-3-lane, t-junction, y-junction, 4-way-intersection)")]
    UnknownTemplate(String),
    #[error("could not place NPC {index} without overlapping logged agents")]
    Placement { index: usize },
}

struct MapTemplate {
    graph: LaneGraph,
    /// Candidate SDC routes; the seed picks one.
    sdc_routes: Vec<Vec<LaneId>>,
    /// Arc-length window for the SDC at the current frame.
    sdc_window: (f64, f64),
    npc_routes: Vec<Vec<LaneId>>,
}

fn line(a: Vec2, b: Vec2, spacing: f64) -> Vec<Vec2> {
    let n = (a.dist(b) / spacing).ceil().max(1.0) as usize;
    (0..=n).map(|k| a.lerp(b, k as f64 / n as f64)).collect()
}

/// Arc around `center` from angle `a0` to `a1` (radians, sweep sign gives
/// direction).
fn arc(center: Vec2, radius: f64, a0: f64, a1: f64) -> Vec<Vec2> {
    let n = ((a1 - a0).abs() * radius).ceil().max(4.0) as usize;
    (0..=n)
        .map(|k| {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            center + Vec2::from_angle(a) * radius
        })
        .collect()
}

fn join(parts: Vec<Vec<Vec2>>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::new();
    for part in parts {
        for p in part {
            if out.last().is_none_or(|q| q.dist(p) > 1e-9) {
                out.push(p);
            }
        }
    }
    out
}

fn lane(id: LaneId, pts: Vec<Vec2>, exits: Vec<LaneId>, speed_limit: f64) -> Lane {
    Lane {
        id,
        centerline: Polyline::new(pts),
        exits,
        left_neighbor: None,
        right_neighbor: None,
        speed_limit,
    }
}

fn straight_three_lane() -> MapTemplate {
    const SEGMENTS: u32 = 6;
    const SEG_LEN: f64 = 50.0;
    let mut lanes = Vec::new();
    for seg in 0..SEGMENTS {
        for row in 0..3u32 {
            let id = seg * 3 + row;
            let y = row as f64 * LANE_WIDTH;
            let x0 = seg as f64 * SEG_LEN;
            let exits = if seg + 1 < SEGMENTS { vec![id + 3] } else { vec![] };
            let mut l = lane(id, line(Vec2::new(x0, y), Vec2::new(x0 + SEG_LEN, y), 5.0), exits, 15.0);
            l.left_neighbor = (row < 2).then_some(id + 1);
            l.right_neighbor = (row > 0).then(|| id - 1);
            lanes.push(l);
        }
    }
    let end = SEGMENTS as f64 * SEG_LEN;
    let edges = vec![
        Polyline::new(vec![Vec2::new(0.0, -HALF_LANE), Vec2::new(end, -HALF_LANE)]),
        Polyline::new(vec![
            Vec2::new(end, 2.0 * LANE_WIDTH + HALF_LANE),
            Vec2::new(0.0, 2.0 * LANE_WIDTH + HALF_LANE),
        ]),
    ];
    let rows: Vec<Vec<LaneId>> = (0..3u32).map(|r| (0..SEGMENTS).map(|s| s * 3 + r).collect()).collect();
    MapTemplate {
        graph: LaneGraph::new(lanes, edges, vec![]),
        sdc_routes: vec![rows[1].clone()],
        sdc_window: (20.0, 40.0),
        npc_routes: rows,
    }
}

/// Junction built from up to four arms; arm `d` is the south arm rotated by
/// `d * 90°` counter-clockwise. Inbound lane ids are `d`, outbound `4 + d`,
/// connectors `8 + 3d + k` with k = 0 right, 1 straight, 2 left.
fn junction(arms: &[usize]) -> (Vec<Lane>, Vec<Polyline>, Vec<Polyline>) {
    let rot = |d: usize, p: Vec2| p.rotate(d as f64 * FRAC_PI_2);
    let has = |d: usize| arms.contains(&d);
    let mut lanes = Vec::new();
    for &d in arms {
        let inbound_end = rot(d, Vec2::new(HALF_LANE, -JUNCTION_SETBACK));
        let mut exits = Vec::new();
        for (k, target) in [(d + 1) % 4, (d + 2) % 4, (d + 3) % 4].into_iter().enumerate() {
            if !has(target) {
                continue;
            }
            let conn_id = (8 + 3 * d + k) as LaneId;
            exits.push(conn_id);
            let out_start = rot(target, Vec2::new(-HALF_LANE, -JUNCTION_SETBACK));
            let pts = match k {
                0 => {
                    let c = rot(d, Vec2::new(JUNCTION_SETBACK, -JUNCTION_SETBACK));
                    let a0 = (inbound_end - c).angle();
                    arc(c, JUNCTION_SETBACK - HALF_LANE, a0, a0 - FRAC_PI_2)
                }
                1 => line(inbound_end, out_start, 1.0),
                _ => {
                    let c = rot(d, Vec2::new(-JUNCTION_SETBACK, -JUNCTION_SETBACK));
                    let a0 = (inbound_end - c).angle();
                    arc(c, JUNCTION_SETBACK + HALF_LANE, a0, a0 + FRAC_PI_2)
                }
            };
            let limit = if k == 1 { 12.0 } else { 8.0 };
            lanes.push(lane(conn_id, pts, vec![4 + target as LaneId], limit));
        }
        exits.sort_unstable();
        lanes.push(lane(
            d as LaneId,
            line(
                rot(d, Vec2::new(HALF_LANE, -ARM_LENGTH)),
                inbound_end,
                5.0,
            ),
            exits,
            12.0,
        ));
        lanes.push(lane(
            4 + d as LaneId,
            line(
                rot(d, Vec2::new(-HALF_LANE, -JUNCTION_SETBACK)),
                rot(d, Vec2::new(-HALF_LANE, -ARM_LENGTH)),
                5.0,
            ),
            vec![],
            12.0,
        ));
    }
    // curb between arm d and arm d+1 (south-east corner for d = 0)
    let curb = |d: usize| -> Polyline {
        let c = Vec2::new(JUNCTION_SETBACK, -JUNCTION_SETBACK);
        let pts = join(vec![
            vec![Vec2::new(LANE_WIDTH, -ARM_LENGTH), Vec2::new(LANE_WIDTH, -JUNCTION_SETBACK)],
            arc(c, CURB_RADIUS, PI, FRAC_PI_2),
            vec![Vec2::new(JUNCTION_SETBACK, -LANE_WIDTH), Vec2::new(ARM_LENGTH, -LANE_WIDTH)],
        ]);
        Polyline::new(pts.into_iter().map(|p| rot(d, p)).collect())
    };
    let edges = (0..4).filter(|&d| has(d) && has((d + 1) % 4)).map(curb).collect();
    let solids = arms
        .iter()
        .map(|&d| {
            Polyline::new(vec![
                rot(d, Vec2::new(0.0, -ARM_LENGTH)),
                rot(d, Vec2::new(0.0, -JUNCTION_SETBACK)),
            ])
        })
        .collect();
    (lanes, edges, solids)
}

fn four_way() -> MapTemplate {
    let (lanes, edges, solids) = junction(&[0, 1, 2, 3]);
    let npc_routes = (0..4u32)
        .flat_map(|d| (0..3u32).map(move |k| vec![d, 8 + 3 * d + k, 4 + (d + 1 + k) % 4]))
        .collect();
    MapTemplate {
        graph: LaneGraph::new(lanes, edges, solids),
        sdc_routes: vec![vec![0, 8, 5], vec![0, 9, 6], vec![0, 10, 7]],
        sdc_window: (40.0, 55.0),
        npc_routes,
    }
}

fn t_junction() -> MapTemplate {
    // stem from the south, main road east-west; north arm absent
    let (lanes, mut edges, solids) = junction(&[0, 1, 3]);
    edges.push(Polyline::new(vec![
        Vec2::new(ARM_LENGTH, LANE_WIDTH),
        Vec2::new(-ARM_LENGTH, LANE_WIDTH),
    ]));
    MapTemplate {
        graph: LaneGraph::new(lanes, edges, solids),
        sdc_routes: vec![vec![0, 8, 5], vec![0, 10, 7]],
        sdc_window: (40.0, 55.0),
        npc_routes: vec![
            vec![0, 8, 5],
            vec![0, 10, 7],
            vec![1, 12, 7],
            vec![1, 13, 4],
            vec![3, 17, 4],
            vec![3, 18, 5],
        ],
    }
}

fn y_junction() -> MapTemplate {
    const BRANCH_RADIUS: f64 = 30.0;
    let bend = 40f64.to_radians();
    let c = Vec2::new(0.0, BRANCH_RADIUS);
    let bend_end = c + Vec2::from_angle(-FRAC_PI_2 + bend) * BRANCH_RADIUS;
    let dir = Vec2::from_angle(bend);
    let far = bend_end + dir * 80.0;
    let inbound = lane(0, line(Vec2::new(-ARM_LENGTH, 0.0), Vec2::ZERO, 5.0), vec![1, 2], 12.0);
    let branch_a = lane(1, line(Vec2::ZERO, Vec2::new(ARM_LENGTH, 0.0), 5.0), vec![], 12.0);
    let branch_b = lane(
        2,
        join(vec![arc(c, BRANCH_RADIUS, -FRAC_PI_2, -FRAC_PI_2 + bend), line(bend_end, far, 5.0)]),
        vec![],
        12.0,
    );
    let left_off = dir.perp() * HALF_LANE;
    let outer = join(vec![
        vec![far + left_off, bend_end + left_off],
        arc(c, BRANCH_RADIUS - HALF_LANE, -FRAC_PI_2 + bend, -FRAC_PI_2),
        vec![Vec2::new(0.0, HALF_LANE), Vec2::new(-ARM_LENGTH, HALF_LANE)],
    ]);
    let gore_r = BRANCH_RADIUS + HALF_LANE;
    let nose_x = (gore_r * gore_r - (BRANCH_RADIUS - HALF_LANE).powi(2)).sqrt();
    let nose_angle = -FRAC_PI_2 + (nose_x / gore_r).asin();
    let gore = join(vec![
        vec![Vec2::new(ARM_LENGTH, HALF_LANE), Vec2::new(nose_x, HALF_LANE)],
        arc(c, gore_r, nose_angle, -FRAC_PI_2 + bend),
        vec![bend_end - left_off, far - left_off],
    ]);
    let edges = vec![
        Polyline::new(vec![Vec2::new(-ARM_LENGTH, -HALF_LANE), Vec2::new(ARM_LENGTH, -HALF_LANE)]),
        Polyline::new(outer),
        Polyline::new(gore),
    ];
    MapTemplate {
        graph: LaneGraph::new(vec![inbound, branch_a, branch_b], edges, vec![]),
        sdc_routes: vec![vec![0, 1], vec![0, 2]],
        sdc_window: (45.0, 60.0),
        npc_routes: vec![vec![0, 1], vec![0, 2]],
    }
}

fn build_template(t: Template) -> MapTemplate {
    match t {
        Template::Straight3Lane => straight_three_lane(),
        Template::TJunction => t_junction(),
        Template::YJunction => y_junction(),
        Template::FourWay => four_way(),
    }
}

/// Lane graph of a template, without agents.
pub fn template_graph(t: Template) -> LaneGraph {
    build_template(t).graph
}

fn route_polyline(graph: &LaneGraph, route: &[LaneId]) -> Polyline {
    let parts = route
        .iter()
        .map(|id| graph.lane(*id).expect("template route lanes exist").centerline.points().to_vec())
        .collect();
    Polyline::new(join(parts))
}

/// Constant-speed log along `path` with the current frame at arc length
/// `s_current`. All frames are valid.
pub fn constant_speed_track(
    agent_id: u32,
    kind: AgentKind,
    path: &Polyline,
    s_current: f64,
    speed: f64,
    length: f64,
    width: f64,
) -> Track {
    let states = (0..TRACK_FRAMES)
        .map(|f| {
            let s = s_current + speed * DT * (f as f64 - CURRENT_FRAME as f64);
            let p = path.point_at_extended(s);
            let heading = wrap_angle(path.heading_at(s));
            AgentState {
                x: p.x,
                y: p.y,
                heading,
                vx: speed * heading.cos(),
                vy: speed * heading.sin(),
                length,
                width,
                valid: true,
            }
        })
        .collect();
    Track {
        agent_id,
        kind,
        states,
    }
}

fn logs_conflict(a: &Track, b: &Track) -> bool {
    a.states.iter().zip(&b.states).any(|(sa, sb)| {
        sa.valid && sb.valid && sa.position().dist(sb.position()) < 12.0 && sa.bbox().gap(&sb.bbox()) < MIN_LOGGED_GAP
    })
}

fn template_seed(t: Template, seed: u64) -> u64 {
    // FNV-1a over the template name, mixed with the user seed
    let mut h: u64 = 0xcbf29ce484222325;
    for b in t.name().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Deterministic synthetic scenario for a (descriptor, seed) pair.
pub fn synth_scenario(spec: &SynthSpec, seed: u64) -> Result<Scenario, SynthError> {
    let template = Template::from_name(&spec.template)?;
    let map = build_template(template);
    let mut rng = ChaCha8Rng::seed_from_u64(template_seed(template, seed));

    let sdc_route = &map.sdc_routes[rng.random_range(0..map.sdc_routes.len())];
    let sdc_path = route_polyline(&map.graph, sdc_route);
    let sdc_speed = rng.random_range(7.0..10.0);
    let sdc_s = rng.random_range(map.sdc_window.0..map.sdc_window.1);
    let sdc = constant_speed_track(0, AgentKind::Vehicle, &sdc_path, sdc_s, sdc_speed, 4.8, 2.0);

    let mut tracks = vec![sdc];
    for index in 0..spec.npcs {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let route = &map.npc_routes[rng.random_range(0..map.npc_routes.len())];
            let path = route_polyline(&map.graph, route);
            let speed: f64 = rng.random_range(5.0..11.0);
            let length = rng.random_range(4.2..5.2);
            let width = rng.random_range(1.8..2.1);
            let lo = speed * 1.0 + 3.0;
            let hi = path.length() - speed * 8.0 - 3.0;
            if hi <= lo {
                continue;
            }
            let s = rng.random_range(lo..hi);
            let cand = constant_speed_track(index as u32 + 1, AgentKind::Vehicle, &path, s, speed, length, width);
            if tracks.iter().all(|t| !logs_conflict(t, &cand)) {
                placed = Some(cand);
                break;
            }
        }
        tracks.push(placed.ok_or(SynthError::Placement { index })?);
    }

    let sdc = &tracks[0];
    let goal = sdc.states[TRACK_FRAMES - 1].position();
    let s2g_dist = logged_arc_length(sdc, CURRENT_FRAME, TRACK_FRAMES - 1);
    Ok(Scenario {
        id: format!("{}-s{}-n{}", template.name(), seed, spec.npcs),
        dt: DT,
        tracks,
        sdc_index: 0,
        lane_graph: map.graph,
        goal,
        s2g_dist,
    })
}

/// The standard fixture set: every template, `per_template` seeds each, with
/// a template-appropriate NPC count.
pub fn fixture_set(per_template: u64) -> Vec<Scenario> {
    let mut out = Vec::new();
    for t in Template::ALL {
        let npcs = match t {
            Template::Straight3Lane => 4,
            Template::TJunction => 3,
            Template::YJunction => 2,
            Template::FourWay => 5,
        };
        for seed in 0..per_template {
            out.push(synth_scenario(&SynthSpec::new(t.name(), npcs), seed).expect("fixture templates place agents"));
        }
    }
    out
}
