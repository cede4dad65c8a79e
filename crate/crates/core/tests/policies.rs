mod common;

use common::{distance_to_any, idm_equilibrium_gap, idm_follow, line_track, straight_scenario};
use drivesim::dynamics::Waypoint;
use drivesim::env::{Env, EnvConfig};
use drivesim::geometry::Vec2;
use drivesim::policies::{
    expert_waypoints, goal_selection_nearest, idm_accel, BuiltinFactory, ConstantVelocity, Expert, IdmParams,
    LaneFollow, LaneFollowConfig, OpenLoop, Planner, PlannerFactory, PlannerOutput, PolicyError, SdcPolicy,
};
use drivesim::scenario::{AgentKind, AgentState, Scenario, CURRENT_FRAME, DT, TRACK_FRAMES};
use drivesim::synth::{constant_speed_track, fixture_set, template_graph, Template};
use proptest::prelude::*;

fn waypoints(out: PlannerOutput) -> Vec<Waypoint> {
    match out {
        PlannerOutput::Waypoints(w) => w,
        other => panic!("expected waypoints, got {other:?}"),
    }
}

fn plan_once(planner: &mut dyn Planner, sc: &Scenario, horizon: usize) -> Vec<Waypoint> {
    let env = Env::reset(sc, &EnvConfig::default()).unwrap();
    waypoints(planner.plan(&env.view(), horizon).unwrap())
}

#[test]
fn idm_free_road_limits() {
    let p = IdmParams::default();
    assert_eq!(idm_accel(0.0, f64::INFINITY, 0.0, &p), p.max_accel);
    assert!(idm_accel(p.desired_speed, f64::INFINITY, 0.0, &p).abs() < 1e-12);
    assert!(idm_accel(20.0, f64::INFINITY, 0.0, &p) < 0.0);
    assert_eq!(idm_accel(10.0, 0.0, 0.0, &p), -p.hard_decel);
    assert_eq!(idm_accel(10.0, 0.5, 10.0, &p), -p.hard_decel);
}

#[test]
fn idm_settles_at_equilibrium_gap() {
    let p = IdmParams::default();
    for v_lead in [2.0, 5.0, 8.0, 10.0, 12.0] {
        let want = idm_equilibrium_gap(v_lead, p.desired_speed, p.min_gap, p.time_headway, p.exponent);
        for (gap0, v0) in [(want * 1.5, v_lead), (want * 0.8, v_lead), (want, v_lead * 0.5)] {
            let (gap, v) = idm_follow(|v, s, dv| idm_accel(v, s, dv, &p), v_lead, gap0, v0, 60.0);
            assert!((gap - want).abs() / want < 0.01, "v={v_lead} start {gap0}: {gap} vs {want}");
            assert!((v - v_lead).abs() < 0.05 * v_lead.max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn idm_monotone_in_speed_and_gap(
        v in 0.0..20.0f64, dv_extra in 0.0..3.0f64,
        gap in 0.5..80.0f64, gap_extra in 0.0..20.0f64,
        dv in -5.0..5.0f64,
    ) {
        let p = IdmParams::default();
        prop_assert!(idm_accel(v + dv_extra, gap, dv, &p) <= idm_accel(v, gap, dv, &p) + 1e-12);
        prop_assert!(idm_accel(v, gap + gap_extra, dv, &p) >= idm_accel(v, gap, dv, &p) - 1e-12);
        prop_assert!(idm_accel(v, f64::INFINITY, 0.0, &p) >= idm_accel(v, gap, dv.max(0.0), &p) - 1e-12);
    }
}

#[test]
fn expert_replays_the_next_frames() {
    for sc in fixture_set(1) {
        let wp = plan_once(&mut Expert::new(&sc), &sc, 10);
        let log = &sc.sdc().states;
        assert_eq!(wp.len(), 10);
        for (k, w) in wp.iter().enumerate() {
            let s = &log[CURRENT_FRAME + 1 + k];
            assert_eq!((w.x, w.y, w.heading), (s.x, s.y, s.heading));
        }
    }
}

#[test]
fn expert_truncates_at_end_of_log() {
    let sc = &fixture_set(1)[0];
    let track = sc.sdc();
    let wp = expert_waypoints(track, 85, 10).unwrap();
    assert_eq!(wp.len(), 10);
    let last = &track.states[TRACK_FRAMES - 1];
    for (k, w) in wp.iter().enumerate() {
        let s = &track.states[(86 + k).min(TRACK_FRAMES - 1)];
        assert_eq!((w.x, w.y), (s.x, s.y));
    }
    for w in &wp[4..] {
        assert_eq!((w.x, w.y, w.heading), (last.x, last.y, last.heading));
    }
}

#[test]
fn expert_static_agent_holds_pose() {
    let track = line_track(3, 40.0, 1.0, 0.0);
    let wp = expert_waypoints(&track, CURRENT_FRAME, 10).unwrap();
    for w in wp {
        assert_eq!((w.x, w.y, w.heading), (40.0, 1.0, 0.0));
    }
}

#[test]
fn expert_reports_removed_agent() {
    let mut track = line_track(4, 40.0, 0.0, 5.0);
    track.states[CURRENT_FRAME + 3] = AgentState::invalid();
    let err = expert_waypoints(&track, CURRENT_FRAME, 10).unwrap_err();
    assert_eq!(
        err,
        PolicyError::AgentRemoved {
            agent_id: 4,
            frame: CURRENT_FRAME + 3
        }
    );
}

#[test]
fn constant_velocity_extrapolates() {
    let sc = straight_scenario("cv", 8.0, 60.0, vec![]);
    let wp = plan_once(&mut ConstantVelocity, &sc, 10);
    for (k, w) in wp.iter().enumerate() {
        assert!((w.x - (10.0 + 8.0 * DT * (k + 1) as f64)).abs() < 1e-9);
        assert_eq!(w.y, 0.0);
    }
}

#[test]
fn lanefollow_straight_road_stays_on_centerline() {
    let sc = straight_scenario("lf", 8.0, 60.0, vec![]);
    let wp = plan_once(&mut LaneFollow::new(&sc, LaneFollowConfig::default(), 0), &sc, 30);
    let mut prev = 10.0;
    for w in &wp {
        assert!(w.y.abs() < 1e-9, "{w:?}");
        assert!(w.heading.abs() < 1e-9);
        assert!(w.x > prev);
        prev = w.x;
    }
}

fn t_junction_left_turn() -> Scenario {
    let graph = template_graph(Template::TJunction);
    let stem = graph.lane(0).unwrap().centerline.clone();
    // 50 m along the stem leaves 40 m to the junction
    let sdc = constant_speed_track(0, AgentKind::Vehicle, &stem, 50.0, 8.0, 4.8, 2.0);
    let sc = Scenario {
        id: "t-left".into(),
        dt: DT,
        tracks: vec![sdc],
        sdc_index: 0,
        lane_graph: graph,
        goal: Vec2::new(-40.0, 1.75),
        s2g_dist: 80.0,
    };
    sc.validate().unwrap();
    sc
}

#[test]
fn lanefollow_takes_the_left_branch_to_the_goal() {
    let sc = t_junction_left_turn();
    let g = &sc.lane_graph;
    let wp = plan_once(&mut LaneFollow::new(&sc, LaneFollowConfig::default(), 0), &sc, 80);
    // stem, left connector, westbound lane
    let route = [&g.lane(0).unwrap().centerline, &g.lane(10).unwrap().centerline, &g.lane(7).unwrap().centerline];
    for w in &wp {
        let d = distance_to_any(w.position(), &route);
        assert!(d < 0.05, "{w:?} is {d} m off the route");
    }
    let end = wp.last().unwrap().position();
    assert!(distance_to_any(end, &route[2..]) < 0.05 && end.x < -10.0, "{end:?}");
    // never drifts toward the eastbound branch
    assert!(wp.iter().all(|w| w.x <= 1.75 + 1e-9), "{wp:?}");
}

#[test]
fn lanefollow_stops_behind_stationary_leader() {
    // bumper gap of 10 m: 10 + 2.25 + 10 + 2.25
    let sc = straight_scenario("lead", 10.0, 80.0, vec![line_track(2, 24.5, 0.0, 0.0)]);
    let wp = plan_once(&mut LaneFollow::new(&sc, LaneFollowConfig::default(), 0), &sc, 80);
    let mut xs = vec![10.0];
    xs.extend(wp.iter().map(|w| w.x));
    let speeds: Vec<f64> = xs.windows(2).map(|w| (w[1] - w[0]) / DT).collect();
    for pair in speeds.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "{speeds:?}");
    }
    assert!(*speeds.last().unwrap() < 0.1, "{speeds:?}");
    let front = xs.last().unwrap() + 2.4;
    assert!(front < 24.5 - 2.25, "front bumper at {front}");
}

#[test]
fn lanefollow_reports_unroutable_goal() {
    let mut sc = straight_scenario("far", 8.0, 60.0, vec![]);
    sc.goal = Vec2::new(60.0, 30.0);
    let env = Env::reset(&sc, &EnvConfig::default()).unwrap();
    let err = LaneFollow::new(&sc, LaneFollowConfig::default(), 0).plan(&env.view(), 10);
    assert!(matches!(err, Err(PolicyError::Unroutable(_))), "{err:?}");
}

#[test]
fn policies_are_deterministic_per_seed() {
    let sc = &fixture_set(1)[1];
    let cfg = LaneFollowConfig {
        waypoint_noise: 0.5,
        ..LaneFollowConfig::default()
    };
    let a = plan_once(&mut LaneFollow::new(sc, cfg, 9), sc, 10);
    let b = plan_once(&mut LaneFollow::new(sc, cfg, 9), sc, 10);
    let c = plan_once(&mut LaneFollow::new(sc, cfg, 10), sc, 10);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn open_loop_replays_first_prediction() {
    let sc = straight_scenario("ol", 8.0, 60.0, vec![]);
    let factory = BuiltinFactory {
        policy: SdcPolicy::ConstantVelocity,
        open_loop: true,
    };
    let mut planner = factory.build(&sc, 0);
    let mut env = Env::reset(&sc, &EnvConfig::default()).unwrap();
    let first = waypoints(planner.plan(&env.view(), 10).unwrap());
    let full = plan_once(&mut ConstantVelocity, &sc, 80);
    assert_eq!(first, full[..10]);
    env.step(&PlannerOutput::Waypoints(first)).unwrap();
    let second = waypoints(planner.plan(&env.view(), 10).unwrap());
    assert_eq!(second, full[1..11]);
    // wrapping is idempotent for an already-open-loop planner
    let mut twice = OpenLoop::new(Box::new(OpenLoop::new(Box::new(ConstantVelocity))));
    let env = Env::reset(&sc, &EnvConfig::default()).unwrap();
    assert_eq!(waypoints(twice.plan(&env.view(), 10).unwrap()), full[..10]);
}

#[test]
fn goal_selection_picks_nearest_endpoint() {
    let cand = |x: f64, y: f64| vec![Waypoint::new(0.0, 0.0, 0.0), Waypoint::new(x, y, 0.0)];
    let goal = Vec2::new(10.0, 0.0);
    assert_eq!(goal_selection_nearest(&[], goal), None);
    assert_eq!(goal_selection_nearest(&[cand(5.0, 0.0), cand(9.0, 1.0), cand(20.0, 0.0)], goal), Some(1));
    // ties keep the first
    assert_eq!(goal_selection_nearest(&[cand(10.0, 1.0), cand(10.0, -1.0)], goal), Some(0));
    // empty candidates are skipped
    assert_eq!(goal_selection_nearest(&[vec![], cand(0.0, 0.0)], goal), Some(1));
}
