mod common;

use common::{sampled_gap, straight_road_signed_distance};
use drivesim::geometry::{OrientedBox, Polyline, Vec2};
use drivesim::metrics::{collision_gap, offroad_distance, road_edge_distance};
use drivesim::synth::{template_graph, Template, LANE_WIDTH};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
    OrientedBox::new(
        Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
        rng.random_range(-3.2..3.2),
        rng.random_range(1.0..6.0),
        rng.random_range(0.8..2.5),
    )
}

#[test]
fn box_gap_matches_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut overlapping = 0;
    for i in 0..200 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let got = a.gap(&b);
        let want = sampled_gap(&a, &b);
        assert_eq!(got <= 0.0, want <= 0.0, "pair {i}: sign {got} vs {want}");
        assert!((got - want).abs() < 0.05, "pair {i}: {got} vs {want}");
        if want <= 0.0 {
            overlapping += 1;
        }
    }
    // both branches of the oracle get exercised
    assert!(overlapping > 20 && overlapping < 180, "{overlapping}");
}

#[test]
fn touching_boxes_have_zero_gap() {
    let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    let b = OrientedBox::new(Vec2::new(4.0, 0.0), 0.0, 4.0, 2.0);
    assert!(a.gap(&b).abs() < 1e-12);
    let c = OrientedBox::new(Vec2::new(5.0, 0.0), 0.0, 4.0, 2.0);
    assert!((a.gap(&c) - 1.0).abs() < 1e-12);
    let d = OrientedBox::new(Vec2::new(3.0, 0.0), 0.0, 4.0, 2.0);
    assert!((a.gap(&d) + 1.0).abs() < 1e-12);
}

#[test]
fn collision_gap_is_minimum_over_others() {
    let ego = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    assert_eq!(collision_gap(&ego, &[]), f64::INFINITY);
    let near = OrientedBox::new(Vec2::new(6.0, 0.0), 0.0, 4.0, 2.0);
    let far = OrientedBox::new(Vec2::new(0.0, 10.0), 0.0, 4.0, 2.0);
    assert!((collision_gap(&ego, &[far, near]) - 2.0).abs() < 1e-12);
}

#[test]
fn straight_road_probes_match_rectangle_oracle() {
    let g = template_graph(Template::Straight3Lane);
    let (y_lo, y_hi) = (-LANE_WIDTH / 2.0, 2.5 * LANE_WIDTH);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let p = Vec2::new(rng.random_range(5.0..295.0), rng.random_range(-6.0..13.0));
        let want = straight_road_signed_distance(p, y_lo, y_hi);
        let got = offroad_distance(p, &g);
        assert_eq!(got > 0.0, want > 0.0, "{p:?}: {got} vs {want}");
        assert!((got - want).abs() < 0.05, "{p:?}: {got} vs {want}");
    }
}

#[test]
fn solid_lines_shape_distance_but_not_sign() {
    let lane = drivesim::scenario::Lane {
        id: 0,
        centerline: Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]),
        exits: vec![],
        left_neighbor: None,
        right_neighbor: None,
        speed_limit: 10.0,
    };
    let edges = vec![
        Polyline::new(vec![Vec2::new(0.0, -5.0), Vec2::new(100.0, -5.0)]),
        Polyline::new(vec![Vec2::new(100.0, 5.0), Vec2::new(0.0, 5.0)]),
    ];
    let solid = vec![Polyline::new(vec![Vec2::new(0.0, 1.0), Vec2::new(100.0, 1.0)])];
    let g = drivesim::scenario::LaneGraph::new(vec![lane], edges, solid);
    let p = Vec2::new(50.0, 0.5);
    assert!((road_edge_distance(p, &g) + 4.5).abs() < 1e-12);
    assert!((offroad_distance(p, &g) + 0.5).abs() < 1e-12);
    // crossing the solid line keeps the point on-road
    assert!(offroad_distance(Vec2::new(50.0, 1.2), &g) < 0.0);
    assert!((offroad_distance(Vec2::new(50.0, 6.0), &g) - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gap_is_symmetric_and_rigid(
        ax in -5.0..5.0f64, ay in -5.0..5.0f64, ah in -3.0..3.0f64,
        bx in -5.0..5.0f64, by in -5.0..5.0f64, bh in -3.0..3.0f64,
        shift_x in -50.0..50.0f64, shift_y in -50.0..50.0f64, turn in -3.0..3.0f64,
    ) {
        let a = OrientedBox::new(Vec2::new(ax, ay), ah, 4.5, 2.0);
        let b = OrientedBox::new(Vec2::new(bx, by), bh, 3.0, 1.5);
        let g = a.gap(&b);
        prop_assert!((g - b.gap(&a)).abs() < 1e-9);
        let moved = |c: Vec2, h: f64, l: f64, w: f64| {
            OrientedBox::new(c.rotate(turn) + Vec2::new(shift_x, shift_y), h + turn, l, w)
        };
        let a2 = moved(Vec2::new(ax, ay), ah, 4.5, 2.0);
        let b2 = moved(Vec2::new(bx, by), bh, 3.0, 1.5);
        prop_assert!((g - a2.gap(&b2)).abs() < 1e-8);
    }

    #[test]
    fn overlap_iff_nonpositive_gap(
        bx in -6.0..6.0f64, by in -4.0..4.0f64, bh in -3.0..3.0f64,
    ) {
        let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
        let b = OrientedBox::new(Vec2::new(bx, by), bh, 4.0, 2.0);
        let g = a.gap(&b);
        if b.corners().iter().any(|c| a.contains(*c)) || a.corners().iter().any(|c| b.contains(*c)) {
            prop_assert!(g <= 1e-12);
        }
        if g > 0.0 {
            prop_assert!(!a.overlaps(&b));
        }
    }
}
