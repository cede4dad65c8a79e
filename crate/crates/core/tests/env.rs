mod common;

use std::collections::BTreeMap;

use common::{line_track, straight_scenario};
use drivesim::dynamics::{Action, Waypoint};
use drivesim::env::{
    batch_simulate, rollout, simulate_parallel, BatchConfig, DynamicsModel, Env, EnvConfig, EnvError, Observer,
    StateObserver, Transition, MAX_STEPS, OBS_DIM,
};
use drivesim::metrics::{classify_episode, StepSignals, TerminalClass, COMPLETION_REWARD};
use drivesim::policies::{
    BuiltinFactory, LaneFollowConfig, NpcPolicy, Planner, PlannerFactory, PlannerOutput, PolicyError, SdcPolicy,
};
use drivesim::rl::features::{FusedObserver, RecordedFeatures};
use drivesim::scenario::{AgentState, Scenario, CURRENT_FRAME};
use drivesim::synth::fixture_set;

/// Emits the same output every step.
struct Fixed(PlannerOutput);

impl Planner for Fixed {
    fn plan(&mut self, _: &drivesim::env::SimulatorView, _: usize) -> Result<PlannerOutput, PolicyError> {
        Ok(self.0.clone())
    }
}

struct FixedFactory(PlannerOutput);

impl PlannerFactory for FixedFactory {
    fn build<'a>(&'a self, _: &'a Scenario, _: u64) -> Box<dyn Planner + 'a> {
        Box::new(Fixed(self.0.clone()))
    }
}

fn action(accel: f64, steer: f64) -> PlannerOutput {
    PlannerOutput::Action(Action::new(accel, steer))
}

fn noisy_lanefollow() -> BuiltinFactory {
    BuiltinFactory::new(SdcPolicy::LaneFollow(LaneFollowConfig {
        waypoint_noise: 0.3,
        ..LaneFollowConfig::default()
    }))
}

#[test]
fn idle_and_braking_end_stuck_at_step_cap() {
    let sc = straight_scenario("idle", 8.0, 250.0, vec![]);
    for out in [action(0.0, 0.0), action(-6.0, 0.0)] {
        let ep = rollout(&FixedFactory(out), &sc, &EnvConfig::default(), 0, None).unwrap();
        assert_eq!(ep.result.terminal, TerminalClass::Stuck);
        assert_eq!(ep.result.steps, MAX_STEPS);
        assert!(ep.result.log.iter().all(|r| r.reward.completion == 0.0));
    }
}

#[test]
fn reaching_goal_radius_completes_with_bonus() {
    let sc = straight_scenario("goal", 8.0, 20.7, vec![]);
    let cfg = EnvConfig {
        mpc: false,
        dynamics: DynamicsModel::Default,
        ..EnvConfig::default()
    };
    let mut env = Env::reset(&sc, &cfg).unwrap();
    let out = env.step(&PlannerOutput::Waypoints(vec![Waypoint::new(18.8, 0.0, 0.0)])).unwrap();
    assert!(out.done);
    assert_eq!(out.terminal, Some(TerminalClass::Completed));
    let rec = &env.log()[0];
    assert!((rec.ego.x - 18.8).abs() < 1e-12);
    assert_eq!(rec.reward.completion, COMPLETION_REWARD);
    assert!(rec.signals.is_goal);
    assert!(out.reward >= COMPLETION_REWARD - 3.0);
    assert!(matches!(env.step(&action(0.0, 0.0)), Err(EnvError::AfterDone)));
}

#[test]
fn replayed_npc_rear_ends_stationary_ego() {
    // NPC bumper gap 10 - 1.0 k - 4.5 reaches zero between steps 5 and 6
    let sc = straight_scenario("rear", 0.0, 250.0, vec![line_track(2, 0.0, 0.0, 10.0)]);
    let ep = rollout(&FixedFactory(action(0.0, 0.0)), &sc, &EnvConfig::default(), 0, None).unwrap();
    assert_eq!(ep.result.terminal, TerminalClass::Collided);
    assert_eq!(ep.result.steps, 6);
    let gaps: Vec<f64> = ep.result.log.iter().map(|r| r.signals.d_collision).collect();
    for (k, g) in gaps.iter().enumerate() {
        let want = 5.5 - (k + 1) as f64;
        assert!((g - want).abs() < 1e-9, "step {}: {g} vs {want}", k + 1);
    }
    assert!(ep.result.log.last().unwrap().reward.collision < 0.0);
}

#[test]
fn reset_places_every_valid_agent() {
    for sc in fixture_set(2) {
        let a = Env::reset(&sc, &EnvConfig::default()).unwrap();
        let b = Env::reset(&sc, &EnvConfig::default()).unwrap();
        let want = sc
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, t)| *i != sc.sdc_index && t.states[CURRENT_FRAME].valid)
            .count();
        let view = a.view();
        assert_eq!(view.agents.len(), want);
        assert_eq!(view.ego_history.len(), 11);
        assert_eq!(*view.ego_history.last().unwrap(), view.ego);
        assert_eq!(StateObserver.observe(&view), StateObserver.observe(&b.view()));
        let cur = sc.sdc().states[CURRENT_FRAME];
        assert_eq!((a.ego().x, a.ego().y, a.ego().theta), (cur.x, cur.y, cur.heading));
    }
}

#[test]
fn invalid_sdc_is_rejected() {
    let mut sc = straight_scenario("bad", 8.0, 60.0, vec![]);
    sc.tracks[0].states[CURRENT_FRAME] = AgentState::invalid();
    assert!(matches!(
        Env::reset(&sc, &EnvConfig::default()),
        Err(EnvError::InvalidSdc { .. })
    ));
}

#[test]
fn unroutable_goal_ends_stuck_without_bonus() {
    let mut sc = straight_scenario("nowhere", 8.0, 60.0, vec![]);
    sc.goal = drivesim::geometry::Vec2::new(60.0, 40.0);
    let ep = rollout(
        &BuiltinFactory::new(SdcPolicy::from_name("lanefollow").unwrap()),
        &sc,
        &EnvConfig::default(),
        0,
        None,
    )
    .unwrap();
    assert_eq!(ep.result.terminal, TerminalClass::Stuck);
    assert_eq!(ep.result.total_reward, 0.0);
    assert!(ep.result.error.unwrap().contains("unroutable"));
}

#[test]
fn lanefollow_reaches_goal_forty_meters_ahead() {
    let sc = straight_scenario("forty", 8.0, 50.0, vec![]);
    for (dynamics, mpc) in [
        (DynamicsModel::Default, false),
        (DynamicsModel::Bicycle, false),
        (DynamicsModel::Bicycle, true),
    ] {
        let cfg = EnvConfig {
            dynamics,
            mpc,
            ..EnvConfig::default()
        };
        let ep = rollout(&BuiltinFactory::new(SdcPolicy::from_name("lanefollow").unwrap()), &sc, &cfg, 0, None)
            .unwrap();
        assert_eq!(ep.result.terminal, TerminalClass::Completed, "{dynamics:?} mpc={mpc}");
        assert!(ep.result.steps <= MAX_STEPS);
    }
}

#[test]
fn classification_matches_log() {
    let scenarios = fixture_set(3);
    for factory in [
        BuiltinFactory::new(SdcPolicy::ConstantVelocity),
        noisy_lanefollow(),
    ] {
        for npc in [NpcPolicy::Expert, NpcPolicy::Idm] {
            let cfg = EnvConfig {
                npc_policy: npc,
                ..EnvConfig::default()
            };
            let eps = simulate_parallel(&scenarios, &factory, &cfg, 4, 1, Some(&StateObserver)).unwrap();
            for ep in eps {
                let r = &ep.result;
                let sig: Vec<StepSignals> = r.log.iter().map(|s| s.signals).collect();
                let last = r.log.last().map_or(r.initial_ego.position(), |s| s.ego.position());
                if r.error.is_none() {
                    assert_eq!(r.terminal, classify_episode(&sig, last, r.goal), "{}", r.scenario_id);
                }
                assert_eq!(ep.transitions.len(), r.steps);
                assert_eq!(r.log.len(), r.steps);
                let total: f64 = r.log.iter().map(|s| s.reward.total).sum();
                assert_eq!(total, r.total_reward);
                assert!(ep.transitions.iter().all(|t| t.reward.is_finite() && t.obs.len() == OBS_DIM));
                assert!(ep.transitions.last().is_none_or(|t| t.done));
            }
        }
    }
}

fn batch_bytes(workers: usize) -> (String, Vec<Transition>) {
    let scenarios = fixture_set(8);
    assert_eq!(scenarios.len(), 32);
    let cfg = EnvConfig {
        npc_policy: NpcPolicy::Idm,
        ..EnvConfig::default()
    };
    let batch = BatchConfig {
        workers,
        seed: 17,
        cadence: 32,
    };
    let mut buffer = Vec::new();
    let out = batch_simulate(&scenarios, &noisy_lanefollow(), &cfg, &batch, Some(&StateObserver), &mut buffer, |_| {})
        .unwrap();
    let text = serde_json::to_string(&(out.report, &out.episodes)).unwrap();
    (text, buffer)
}

#[test]
fn worker_count_does_not_change_results() {
    let (one, buf_one) = batch_bytes(1);
    let (eight, buf_eight) = batch_bytes(8);
    assert_eq!(one, eight);
    assert_eq!(buf_one, buf_eight);
}

#[test]
fn training_fires_once_per_full_chunk() {
    let scenarios: Vec<Scenario> = fixture_set(18).into_iter().take(70).collect();
    let batch = BatchConfig {
        workers: 3,
        seed: 0,
        cadence: 32,
    };
    let mut seen = Vec::new();
    let mut buffer: Vec<Transition> = Vec::new();
    let out = batch_simulate(
        &scenarios,
        &BuiltinFactory::new(SdcPolicy::Expert),
        &EnvConfig::default(),
        &batch,
        Some(&StateObserver),
        &mut buffer,
        |b| seen.push(b.len()),
    )
    .unwrap();
    assert_eq!(out.train_triggers, 2);
    let steps: Vec<usize> = out.episodes.iter().map(|e| e.steps).collect();
    let first: usize = steps[..32].iter().sum();
    let second: usize = steps[..64].iter().sum();
    assert_eq!(seen, vec![first, second]);
    assert_eq!(buffer.len(), steps.iter().sum::<usize>());
    assert!((out.report.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_workers_is_a_config_error() {
    let scenarios = fixture_set(1);
    let batch = BatchConfig {
        workers: 0,
        ..BatchConfig::default()
    };
    let r = batch_simulate(
        &scenarios,
        &BuiltinFactory::new(SdcPolicy::Expert),
        &EnvConfig::default(),
        &batch,
        None,
        &mut Vec::new(),
        |_| {},
    );
    assert!(matches!(r, Err(EnvError::Config(_))));
}

#[test]
fn observation_dimensions() {
    let sc = &fixture_set(1)[0];
    let env = Env::reset(sc, &EnvConfig::default()).unwrap();
    assert_eq!(StateObserver.dim(), 118);
    assert_eq!(StateObserver.observe(&env.view()).len(), 118);

    let mut steps = BTreeMap::new();
    steps.insert(0, vec![0.25; 256]);
    let mut records = BTreeMap::new();
    records.insert(sc.id.clone(), steps);
    let features = RecordedFeatures::from_records(records).unwrap();
    let fused = FusedObserver { provider: &features };
    assert_eq!(fused.dim(), 374);
    let obs = fused.observe(&env.view());
    assert_eq!(obs.len(), 374);
    assert!(obs[118..].iter().all(|&v| v == 0.25));
}

#[test]
fn expert_replay_is_clean_on_fixtures() {
    let scenarios = fixture_set(5);
    let eps = simulate_parallel(&scenarios, &BuiltinFactory::new(SdcPolicy::Expert), &EnvConfig::default(), 4, 0, None)
        .unwrap();
    for ep in eps {
        assert_eq!(ep.result.terminal, TerminalClass::Completed, "{}", ep.result.scenario_id);
    }
}
