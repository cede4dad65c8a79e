//! Independent oracles and fixture builders shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::f64::consts::PI;

use drivesim::causality::ActionCostTable;
use drivesim::geometry::{OrientedBox, Polyline, Vec2};
use drivesim::scenario::{AgentKind, AgentState, Lane, LaneGraph, LaneId, Scenario, Track, CURRENT_FRAME, DT, TRACK_FRAMES};

// ---------------------------------------------------------------- fixtures

/// One straight lane along +x from 0 to `length`, road edges 2 m either side.
pub fn straight_graph(length: f64) -> LaneGraph {
    let lane = Lane {
        id: 0,
        centerline: Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(length, 0.0)]),
        exits: vec![],
        left_neighbor: None,
        right_neighbor: None,
        speed_limit: 15.0,
    };
    let edges = vec![
        Polyline::new(vec![Vec2::new(0.0, -2.0), Vec2::new(length, -2.0)]),
        Polyline::new(vec![Vec2::new(length, 2.0), Vec2::new(0.0, 2.0)]),
    ];
    LaneGraph::new(vec![lane], edges, vec![])
}

/// Track moving along +x at `speed`, at `x_now` on the current frame.
pub fn line_track(agent_id: u32, x_now: f64, y: f64, speed: f64) -> Track {
    let states = (0..TRACK_FRAMES)
        .map(|f| AgentState {
            x: x_now + speed * DT * (f as f64 - CURRENT_FRAME as f64),
            y,
            heading: 0.0,
            vx: speed,
            vy: 0.0,
            length: 4.5,
            width: 2.0,
            valid: true,
        })
        .collect();
    Track {
        agent_id,
        kind: AgentKind::Vehicle,
        states,
    }
}

/// Empty straight road with the SDC logged at `sdc_speed` from x = 10 and
/// the goal on the centerline at `goal_x`.
pub fn straight_scenario(id: &str, sdc_speed: f64, goal_x: f64, others: Vec<Track>) -> Scenario {
    let mut tracks = vec![line_track(1, 10.0, 0.0, sdc_speed)];
    tracks.extend(others);
    let sc = Scenario {
        id: id.into(),
        dt: DT,
        tracks,
        sdc_index: 0,
        lane_graph: straight_graph(300.0),
        goal: Vec2::new(goal_x, 0.0),
        s2g_dist: (goal_x - 10.0).abs(),
    };
    sc.validate().expect("fixture is valid");
    sc
}

// ------------------------------------------------------- plain 2D helpers

fn sub(a: Vec2, b: Vec2) -> (f64, f64) {
    (a.x - b.x, a.y - b.y)
}

fn hyp(d: (f64, f64)) -> f64 {
    (d.0 * d.0 + d.1 * d.1).sqrt()
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (abx, aby) = sub(b, a);
    let (apx, apy) = sub(p, a);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 { 0.0 } else { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) };
    hyp((apx - t * abx, apy - t * aby))
}

fn heading_of(a: Vec2, b: Vec2) -> f64 {
    (b.y - a.y).atan2(b.x - a.x)
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    }
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Point at arc length `s` along a point list.
fn walk(points: &[Vec2], s: f64) -> Option<Vec2> {
    let mut acc = 0.0;
    for w in points.windows(2) {
        let d = hyp(sub(w[1], w[0]));
        if d > 0.0 && s <= acc + d {
            let t = ((s - acc) / d).clamp(0.0, 1.0);
            return Some(Vec2::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
        }
        acc += d;
    }
    None
}

fn poly_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| hyp(sub(w[1], w[0]))).sum()
}

/// Arc length of the closest point on a polyline (first segment wins ties).
fn closest_arc(points: &[Vec2], p: Vec2) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let (abx, aby) = sub(w[1], w[0]);
        let len2 = abx * abx + aby * aby;
        let len = len2.sqrt();
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.x - w[0].x) * abx + (p.y - w[0].y) * aby) / len2).clamp(0.0, 1.0)
        };
        let q = Vec2::new(w[0].x + t * abx, w[0].y + t * aby);
        let d = hyp(sub(p, q));
        if d < best.0 {
            best = (d, acc + t * len);
        }
        acc += len;
    }
    best
}

// ------------------------------------------------------ causality oracle

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Lc,
    Tl,
    Tr,
    Go,
}

fn lane_points(g: &LaneGraph, id: LaneId) -> Vec<Vec2> {
    g.lane(id).expect("lane").centerline.points().to_vec()
}

fn oracle_move(g: &LaneGraph, from: LaneId, to: LaneId) -> Option<Move> {
    let l = g.lane(from)?;
    if l.left_neighbor == Some(to) || l.right_neighbor == Some(to) {
        return Some(Move::Lc);
    }
    if !l.exits.contains(&to) {
        return None;
    }
    let pts: Vec<Vec2> = lane_points(g, to);
    let pts: Vec<Vec2> = pts.windows(2).filter(|w| w[0] != w[1]).flat_map(|w| [w[0], w[1]]).collect();
    let first = heading_of(pts[0], pts[1]);
    let last = heading_of(pts[pts.len() - 2], pts[pts.len() - 1]);
    let turn = wrap(last - first);
    let threshold = 30f64.to_radians();
    Some(if turn > threshold {
        Move::Tl
    } else if turn < -threshold {
        Move::Tr
    } else {
        Move::Go
    })
}

fn move_cost(m: Move, c: &ActionCostTable) -> f64 {
    match m {
        Move::Lc => c.lane_change,
        Move::Tl => c.turn_left,
        Move::Tr => c.turn_right,
        Move::Go => c.go,
    }
}

/// A complete lane sequence found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub lanes: Vec<LaneId>,
    pub moves: Vec<Move>,
    pub cost: f64,
    pub goal: Vec2,
}

#[derive(Debug, Clone)]
struct Partial {
    lanes: Vec<LaneId>,
    entries: Vec<f64>,
    moves: Vec<Move>,
    cost: f64,
}

/// Distance covered by a sequence whose last lane is driven to its end.
fn covered(g: &LaneGraph, p: &Partial) -> f64 {
    let mut d = 0.0;
    for (i, (&id, &entry)) in p.lanes.iter().zip(&p.entries).enumerate() {
        if p.moves.get(i) == Some(&Move::Lc) {
            continue;
        }
        d += (poly_length(&lane_points(g, id)) - entry).max(0.0);
    }
    d
}

/// Point at `s` metres along the sequence.
fn point_along(g: &LaneGraph, p: &Partial, s: f64) -> Vec2 {
    let mut remaining = s;
    let mut last = Vec2::new(f64::NAN, f64::NAN);
    for (i, (&id, &entry)) in p.lanes.iter().zip(&p.entries).enumerate() {
        let pts = lane_points(g, id);
        if p.moves.get(i) == Some(&Move::Lc) {
            continue;
        }
        let avail = (poly_length(&pts) - entry).max(0.0);
        if remaining <= avail {
            return walk(&pts, entry + remaining).expect("inside lane");
        }
        remaining -= avail;
        last = *pts.last().unwrap();
    }
    last
}

/// Enumerate every simple lane sequence from `start` by breadth-first
/// expansion up to the depth the cost budget allows, then keep those that
/// first exceed `s2g` on their final lane within budget.
pub fn brute_force_paths(g: &LaneGraph, start: (LaneId, f64), s2g: f64, costs: &ActionCostTable) -> Vec<OraclePath> {
    let min_cost = [costs.lane_change, costs.turn_left, costs.turn_right, costs.go]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let max_depth = (costs.max_cost / min_cost).floor() as usize;
    let mut frontier = vec![Partial {
        lanes: vec![start.0],
        entries: vec![start.1],
        moves: vec![],
        cost: 0.0,
    }];
    let mut all = frontier.clone();
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for p in &frontier {
            let cur = *p.lanes.last().unwrap();
            let l = g.lane(cur).unwrap();
            let mut cands: Vec<LaneId> = l.exits.clone();
            cands.extend(l.left_neighbor);
            cands.extend(l.right_neighbor);
            cands.sort_unstable();
            cands.dedup();
            for to in cands {
                if p.lanes.contains(&to) {
                    continue;
                }
                let Some(m) = oracle_move(g, cur, to) else { continue };
                let entry = if m == Move::Lc {
                    let from_pts = lane_points(g, cur);
                    let at = walk(&from_pts, *p.entries.last().unwrap()).unwrap_or(*from_pts.last().unwrap());
                    closest_arc(&lane_points(g, to), at).1
                } else {
                    0.0
                };
                let mut q = p.clone();
                q.lanes.push(to);
                q.entries.push(entry);
                q.moves.push(m);
                q.cost += move_cost(m, costs);
                next.push(q);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    let mut out = Vec::new();
    for p in all {
        if p.cost > costs.max_cost || covered(g, &p) <= s2g {
            continue;
        }
        // every proper prefix must still be short, or the search would have
        // stopped there
        let short_prefixes = (1..p.lanes.len()).all(|k| {
            let pre = Partial {
                lanes: p.lanes[..k].to_vec(),
                entries: p.entries[..k].to_vec(),
                moves: p.moves[..k - 1].to_vec(),
                cost: 0.0,
            };
            covered(g, &pre) <= s2g
        });
        if short_prefixes {
            out.push(OraclePath {
                goal: point_along(g, &p, s2g),
                lanes: p.lanes,
                moves: p.moves,
                cost: p.cost,
            });
        }
    }
    out
}

/// Reference greedy NMS: repeatedly take the highest-priority survivor
/// (original first, then lowest cost, then lane ids) and drop everything
/// within `radius` of it. Items are (original, cost, lanes, point).
pub fn reference_nms(items: &[(bool, f64, Vec<LaneId>, Vec2)], radius: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..items.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let best = *alive
            .iter()
            .min_by(|&&a, &&b| {
                let (ia, ib) = (&items[a], &items[b]);
                ib.0.cmp(&ia.0).then(ia.1.partial_cmp(&ib.1).unwrap()).then(ia.2.cmp(&ib.2))
            })
            .unwrap();
        kept.push(best);
        let p = items[best].3;
        alive.retain(|&i| i != best && hyp(sub(items[i].3, p)) >= radius);
    }
    kept
}

// --------------------------------------------------- box geometry oracle

/// Boundary samples of a box at spacing `h`.
fn boundary_samples(b: &OrientedBox, h: f64) -> Vec<Vec2> {
    let (c, s) = (b.heading.cos(), b.heading.sin());
    let (hl, hw) = (0.5 * b.length, 0.5 * b.width);
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let corners: Vec<Vec2> = local
        .iter()
        .map(|&(x, y)| Vec2::new(b.center.x + c * x - s * y, b.center.y + s * x + c * y))
        .collect();
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, e) = (corners[i], corners[(i + 1) % 4]);
        let n = (hyp(sub(e, a)) / h).ceil() as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push(Vec2::new(a.x + t * (e.x - a.x), a.y + t * (e.y - a.y)));
        }
    }
    out
}

fn corners_of(b: &OrientedBox) -> Vec<Vec2> {
    let (c, s) = (b.heading.cos(), b.heading.sin());
    let (hl, hw) = (0.5 * b.length, 0.5 * b.width);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .iter()
        .map(|&(x, y)| Vec2::new(b.center.x + c * x - s * y, b.center.y + s * x + c * y))
        .collect()
}

fn inside(b: &OrientedBox, p: Vec2) -> bool {
    let (dx, dy) = sub(p, b.center);
    let (c, s) = (b.heading.cos(), b.heading.sin());
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    lx.abs() <= 0.5 * b.length && ly.abs() <= 0.5 * b.width
}

/// Sampling oracle for the signed gap between two boxes: separation is the
/// smallest distance from sampled boundary points of one box to the edges
/// of the other; penetration is the smallest projected overlap over a dense
/// fan of directions.
pub fn sampled_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    const H: f64 = 0.002;
    let sa = boundary_samples(a, H);
    let sb = boundary_samples(b, H);
    let overlapping = sa.iter().any(|&p| inside(b, p)) || sb.iter().any(|&p| inside(a, p));
    if overlapping {
        let mut best = f64::INFINITY;
        let n = 7200;
        for k in 0..n {
            let t = PI * k as f64 / n as f64;
            let (ux, uy) = (t.cos(), t.sin());
            let proj = |pts: &[Vec2]| {
                pts.iter()
                    .map(|p| p.x * ux + p.y * uy)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (a0, a1) = proj(&corners_of(a));
            let (b0, b1) = proj(&corners_of(b));
            best = best.min(a1.min(b1) - a0.max(b0));
        }
        -best
    } else {
        let ca = corners_of(a);
        let cb = corners_of(b);
        let mut best = f64::INFINITY;
        for &p in &sa {
            for i in 0..4 {
                best = best.min(point_segment_distance(p, cb[i], cb[(i + 1) % 4]));
            }
        }
        for &p in &sb {
            for i in 0..4 {
                best = best.min(point_segment_distance(p, ca[i], ca[(i + 1) % 4]));
            }
        }
        best
    }
}

/// Drivable-region oracle for the straight three-lane template: a
/// rectangle between the two road edges. Returns the signed distance
/// (negative inside) to the nearest edge.
pub fn straight_road_signed_distance(p: Vec2, y_lo: f64, y_hi: f64) -> f64 {
    let d = (p.y - y_lo).abs().min((y_hi - p.y).abs());
    if p.y > y_lo && p.y < y_hi {
        -d
    } else {
        d
    }
}

// ------------------------------------------------------------ IDM oracle

/// Closed-form equilibrium gap behind a leader at constant speed `v`.
pub fn idm_equilibrium_gap(v: f64, v0: f64, s0: f64, t_headway: f64, delta: f64) -> f64 {
    (s0 + v * t_headway) / (1.0 - (v / v0).powf(delta)).sqrt()
}

/// Run the library pipeline (search, goal extraction, NMS) from `start` and
/// compare it against the enumerator and the reference NMS. Returns the
/// number of oracle paths on success.
pub fn check_goal_pipeline(
    g: &LaneGraph,
    start: (LaneId, f64),
    s2g: f64,
    costs: &ActionCostTable,
) -> Result<usize, String> {
    use drivesim::causality::{goals_from_paths, nms_goals, search_paths, GoalCandidate, LaneLocation, Maneuver};

    let paths = search_paths(g, LaneLocation { lane: start.0, offset: start.1 }, s2g, costs).map_err(|e| e.to_string())?;
    let oracle = brute_force_paths(g, start, s2g, costs);
    let mut got: Vec<Vec<LaneId>> = paths.iter().map(|p| p.lanes.clone()).collect();
    let mut want: Vec<Vec<LaneId>> = oracle.iter().map(|p| p.lanes.clone()).collect();
    got.sort();
    want.sort();
    if got != want {
        return Err(format!("start {start:?} s2g {s2g}: path sets differ\n  search {got:?}\n  oracle {want:?}"));
    }
    let cands = goals_from_paths(&paths, s2g);
    for (p, c) in paths.iter().zip(&cands) {
        let o = oracle.iter().find(|o| o.lanes == p.lanes).expect("same set");
        let moves: Vec<Move> = p
            .maneuvers
            .iter()
            .map(|m| match m {
                Maneuver::LaneChange => Move::Lc,
                Maneuver::TurnLeft => Move::Tl,
                Maneuver::TurnRight => Move::Tr,
                Maneuver::Go => Move::Go,
            })
            .collect();
        if moves != o.moves || p.cost != o.cost {
            return Err(format!("{:?}: maneuvers/cost {:?}/{} vs oracle {:?}/{}", p.lanes, moves, p.cost, o.moves, o.cost));
        }
        if hyp(sub(c.point, o.goal)) > 1e-6 {
            return Err(format!("{:?}: goal {:?} vs oracle {:?}", p.lanes, c.point, o.goal));
        }
    }
    let kept = nms_goals(&cands, costs.nms_radius);
    let items: Vec<(bool, f64, Vec<LaneId>, Vec2)> =
        oracle.iter().map(|o| (false, o.cost, o.lanes.clone(), o.goal)).collect();
    let mut want_kept: Vec<Vec<LaneId>> = reference_nms(&items, costs.nms_radius)
        .into_iter()
        .map(|i| items[i].2.clone())
        .collect();
    let mut got_kept: Vec<Vec<LaneId>> = kept.iter().map(|k: &GoalCandidate| k.lanes.clone()).collect();
    want_kept.sort();
    got_kept.sort();
    if got_kept != want_kept {
        return Err(format!("start {start:?} s2g {s2g}: NMS differs\n  lib {got_kept:?}\n  ref {want_kept:?}"));
    }
    Ok(oracle.len())
}

/// Follower behind a leader holding `v_lead`, integrated with the same
/// ballistic update the NPC followers use. Returns the bumper gap and the
/// follower speed after `seconds`.
pub fn idm_follow(
    accel: impl Fn(f64, f64, f64) -> f64,
    v_lead: f64,
    gap0: f64,
    v0_follow: f64,
    seconds: f64,
) -> (f64, f64) {
    let (mut gap, mut v) = (gap0, v0_follow);
    let steps = (seconds / DT).round() as usize;
    for _ in 0..steps {
        let a = accel(v, gap, v - v_lead);
        let v_next = (v + a * DT).max(0.0);
        let ds = if v_next > 0.0 {
            v * DT + 0.5 * a * DT * DT
        } else if a < 0.0 {
            v * v / (-2.0 * a)
        } else {
            0.0
        };
        gap += v_lead * DT - ds.max(0.0);
        v = v_next;
    }
    (gap, v)
}

/// Distance from `p` to the nearest of several polylines.
pub fn distance_to_any(p: Vec2, lines: &[&Polyline]) -> f64 {
    lines
        .iter()
        .flat_map(|l| l.points().windows(2).map(move |w| point_segment_distance(p, w[0], w[1])))
        .fold(f64::INFINITY, f64::min)
}

// ------------------------------------------------------- SAC gradients

#[derive(Clone, Copy, Debug)]
pub enum SacNet {
    Actor,
    Q1,
    Q2,
    V,
}

impl SacNet {
    pub const ALL: [SacNet; 4] = [SacNet::Actor, SacNet::Q1, SacNet::Q2, SacNet::V];
}

fn net_mut(sac: &mut drivesim::rl::sac::Sac, n: SacNet) -> &mut drivesim::rl::mlp::Mlp {
    match n {
        SacNet::Actor => &mut sac.actor,
        SacNet::Q1 => &mut sac.q1,
        SacNet::Q2 => &mut sac.q2,
        SacNet::V => &mut sac.v,
    }
}

fn loss_of(sac: &drivesim::rl::sac::Sac, batch: &drivesim::rl::sac::Batch, eps: &ndarray::Array2<f64>, n: SacNet) -> f64 {
    let l = sac.compute_grads(batch, eps).unwrap().losses;
    match n {
        SacNet::Actor => l.actor,
        SacNet::Q1 => l.q1,
        SacNet::Q2 => l.q2,
        SacNet::V => l.v,
    }
}

/// Max relative error between the analytic gradient and central
/// differences over every parameter of one network. Gradients below 1e-6
/// in magnitude are compared against that floor.
pub fn sac_gradient_check(
    sac: &mut drivesim::rl::sac::Sac,
    batch: &drivesim::rl::sac::Batch,
    eps: &ndarray::Array2<f64>,
    n: SacNet,
) -> f64 {
    let g = sac.compute_grads(batch, eps).unwrap();
    let analytic = match n {
        SacNet::Actor => g.actor.flat(),
        SacNet::Q1 => g.q1.flat(),
        SacNet::Q2 => g.q2.flat(),
        SacNet::V => g.v.flat(),
    };
    let base = net_mut(sac, n).params();
    assert_eq!(base.len(), analytic.len());
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        net_mut(sac, n).set_params(&p);
        let up = loss_of(sac, batch, eps, n);
        p[i] = base[i] - h;
        net_mut(sac, n).set_params(&p);
        let down = loss_of(sac, batch, eps, n);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    net_mut(sac, n).set_params(&base);
    worst
}
