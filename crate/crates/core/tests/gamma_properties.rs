//! Properties of the constrained velocity update.

mod common;

use std::sync::Arc;

use common::profile;
use crowdmotion_core::gamma::{
    contextual_constraints, gamma_new_velocity, gamma_step, geometric_constraint, neighbor_constraints,
    select_velocity, AgentState, GammaParams, IntentionHypothesis, Relaxation,
};
use crowdmotion_core::geometry::Vec2;
use crowdmotion_core::road::{PathSource, RoadContext, RoutePath};
use proptest::prelude::*;

const NAMES: [&str; 5] = ["pedestrian", "bicycle", "car", "van", "bus"];

fn moving_agent(id: u64, name: &str, pos: Vec2, heading: f64, speed_frac: f64) -> AgentState {
    let p = profile(name);
    let v = Vec2::from_angle(heading) * (p.profile.s_max * speed_frac);
    AgentState::new(id, p, pos, heading, v)
}

/// Smallest gap between two footprints moving at constant velocity over
/// `[0, horizon]`, sampled every `horizon / 600`.
fn min_gap_constant_velocity(a: &AgentState, va: Vec2, b: &AgentState, vb: Vec2, horizon: f64) -> f64 {
    let fa = a.world_footprint();
    let fb = b.world_footprint();
    (0..=600)
        .map(|k| {
            let t = horizon * k as f64 / 600.0;
            fa.translate(va * t).separation(&fb.translate(vb * t))
        })
        .fold(f64::INFINITY, f64::min)
}

fn neighbours_strategy() -> impl Strategy<Value = Vec<(usize, f64, f64, f64, f64)>> {
    // (profile, distance, bearing, heading, speed fraction)
    prop::collection::vec((0usize..3, 2.0f64..12.0, 0.0f64..6.3, 0.0f64..6.3, 0.0f64..0.9), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn output_stays_in_trackable_set_and_feasible_halfplanes(
        who in 0usize..5,
        heading in 0.0f64..6.3,
        speed in 0.0f64..0.9,
        others in neighbours_strategy(),
    ) {
        let params = GammaParams::default();
        let a = moving_agent(1, NAMES[who], Vec2::ZERO, heading, speed);
        let mut world = vec![a.clone()];
        for (k, &(p, d, bearing, h, s)) in others.iter().enumerate() {
            world.push(moving_agent(k as u64 + 2, NAMES[p], Vec2::from_angle(bearing) * d, h, s));
        }
        let decision = gamma_new_velocity(&a, &world, None, &params, 0.1);
        let cap = a.profile.trackable.world_hull(a.heading);
        prop_assert!(cap.contains(decision.velocity, 1e-6));
        if decision.relaxation == Relaxation::None {
            for h in neighbor_constraints(&a, &world, &params) {
                prop_assert!(h.signed_distance(decision.velocity) >= -1e-6);
            }
        }
    }

    #[test]
    fn attentive_pair_with_feasible_sets_clears_each_other(
        kinds in (0usize..2, 0usize..2),
        distance in 2.5f64..5.0,
        bearing in 0.0f64..6.3,
        ha in 0.0f64..6.3,
        hb in 0.0f64..6.3,
        sa in 0.0f64..0.9,
        sb in 0.0f64..0.9,
    ) {
        let params = GammaParams::default();
        let a = moving_agent(1, NAMES[kinds.0], Vec2::ZERO, ha, sa);
        let b = moving_agent(2, NAMES[kinds.1], Vec2::from_angle(bearing) * distance, hb, sb);
        prop_assume!(a.world_footprint().separation(&b.world_footprint()) > params.safety_margin);
        let world = [a.clone(), b.clone()];
        let da = gamma_new_velocity(&a, &world, None, &params, 0.1);
        let db = gamma_new_velocity(&b, &world, None, &params, 0.1);
        prop_assume!(da.relaxation == Relaxation::None && db.relaxation == Relaxation::None);
        let gap = min_gap_constant_velocity(&a, da.velocity, &b, db.velocity, params.tau);
        prop_assert!(gap >= -1e-6, "gap {gap}");
    }

    #[test]
    fn step_is_independent_of_agent_order(
        agents in prop::collection::vec((0usize..5, -15.0f64..15.0, -15.0f64..15.0, 0.0f64..6.3, 0.0f64..0.9), 2..10),
        rotate_by in 0usize..10,
    ) {
        let params = GammaParams::default();
        let world: Vec<AgentState> = agents
            .iter()
            .enumerate()
            .map(|(i, &(p, x, y, h, s))| moving_agent(i as u64 + 1, NAMES[p], Vec2::new(x, y), h, s))
            .collect();
        let mut shuffled = world.clone();
        shuffled.reverse();
        let k = rotate_by % shuffled.len();
        shuffled.rotate_left(k);
        let mut first = gamma_step(&world, None, &params, 0.1);
        let mut second = gamma_step(&shuffled, None, &params, 0.1);
        first.sort_by_key(|a| a.id);
        second.sort_by_key(|a| a.id);
        for (x, y) in first.iter().zip(&second) {
            prop_assert_eq!(x.position.x.to_bits(), y.position.x.to_bits());
            prop_assert_eq!(x.position.y.to_bits(), y.position.y.to_bits());
            prop_assert_eq!(x.velocity.x.to_bits(), y.velocity.x.to_bits());
            prop_assert_eq!(x.velocity.y.to_bits(), y.velocity.y.to_bits());
            prop_assert_eq!(x.heading.to_bits(), y.heading.to_bits());
        }
    }

    #[test]
    fn larger_responsibility_pushes_boundary_further(
        distance in 1.5f64..8.0,
        bearing in 0.0f64..6.3,
        ha in 0.0f64..6.3,
        hb in 0.0f64..6.3,
        sa in 0.0f64..0.9,
        sb in 0.0f64..0.9,
        r in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let params = GammaParams::default();
        let (lo, hi) = if r.0 <= r.1 { (r.0, r.1) } else { (r.1, r.0) };
        let mut a = moving_agent(1, "pedestrian", Vec2::ZERO, ha, sa);
        let b = moving_agent(2, "pedestrian", Vec2::from_angle(bearing) * distance, hb, sb);
        a.inner.responsibility = lo;
        let h_lo = geometric_constraint(&a, &b, &params);
        a.inner.responsibility = hi;
        let h_hi = geometric_constraint(&a, &b, &params);
        prop_assert_eq!(h_lo.is_some(), h_hi.is_some());
        if let (Some(h_lo), Some(h_hi)) = (h_lo, h_hi) {
            prop_assert!((h_lo.normal - h_hi.normal).norm() < 1e-12);
            // Inside the obstacle the shift is along n, outside it is against
            // n; in both cases its length r·|u| grows with r.
            let offset = |p: Vec2| (p - a.velocity).dot(h_lo.normal);
            let (lo_off, hi_off) = (offset(h_lo.point), offset(h_hi.point));
            prop_assert!(lo_off * hi_off >= -1e-12);
            prop_assert!(hi_off.abs() >= lo_off.abs() - 1e-12);
            prop_assert!((h_hi.point - a.velocity).norm() >= (h_lo.point - a.velocity).norm() - 1e-12);
        }
    }
}

#[test]
fn symmetric_head_on_pair_mirrors_and_passes() {
    let params = GammaParams::default();
    // Point-symmetric about the origin, slightly off the collision axis.
    let a = moving_agent(1, "pedestrian", Vec2::new(-4.0, -0.05), 0.0, 0.75);
    let b = moving_agent(2, "pedestrian", Vec2::new(4.0, 0.05), std::f64::consts::PI, 0.75);
    let world = [a.clone(), b.clone()];
    let va = gamma_new_velocity(&a, &world, None, &params, 0.1).velocity;
    let vb = gamma_new_velocity(&b, &world, None, &params, 0.1).velocity;
    assert!((va + vb).norm() < 1e-6, "{va:?} {vb:?}");
    assert!(min_gap_constant_velocity(&a, va, &b, vb, params.tau) >= -1e-6);

    // Closed loop under the controller: they pass without touching.
    let mut world = world.to_vec();
    for _ in 0..100 {
        world = gamma_step(&world, None, &params, 0.1);
        assert!(world[0].world_footprint().separation(&world[1].world_footprint()) > 0.0);
    }
    assert!(world[0].position.x > 4.0 && world[1].position.x < -4.0);
}

#[test]
fn lone_agent_projects_preferred_velocity_onto_trackable_set() {
    for name in NAMES {
        let a = moving_agent(1, name, Vec2::ZERO, 0.7, 0.5);
        let cap = a.profile.trackable.world_hull(a.heading);
        for k in 0..12 {
            let preferred = Vec2::from_angle(k as f64 * 0.52) * (1.3 * a.profile.profile.s_max);
            let got = select_velocity(&a, preferred, &[], &[], false).velocity;
            assert!(cap.contains(got, 1e-6));
            // Grid oracle over the bounding box of the set, 0.01 m/s cells.
            let (lo, hi) = cap.vertices().iter().fold(
                (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
                |(lo, hi), v| (Vec2::new(lo.x.min(v.x), lo.y.min(v.y)), Vec2::new(hi.x.max(v.x), hi.y.max(v.y))),
            );
            let step = 0.01;
            let mut best = f64::INFINITY;
            let mut x = lo.x;
            while x <= hi.x {
                let mut y = lo.y;
                while y <= hi.y {
                    let v = Vec2::new(x, y);
                    if cap.contains(v, 0.0) {
                        best = best.min(v.distance(preferred));
                    }
                    y += step;
                }
                x += step;
            }
            let d = got.distance(preferred);
            assert!(d <= best + 1e-9 && d >= best - step * std::f64::consts::SQRT_2, "{name} {k}: {d} vs {best}");
        }
    }
}

const TWO_WAY: &str = r#"
[[lane]]
id = 1
centerline = [[0.0, 0.0], [100.0, 0.0]]
width = 3.5
successors = []
left_boundary = "oncoming"
right_boundary = "edge"
"#;

#[test]
fn lateral_speed_toward_oncoming_lane_is_capped() {
    let road = RoadContext::from_toml(TWO_WAY).unwrap();
    // 2 m from the oncoming boundary: half width 1.75, lateral offset -0.25.
    let car = moving_agent(1, "car", Vec2::new(30.0, -0.25), 0.0, 0.5);
    let c = contextual_constraints(&car, &road, 2.0);
    assert!(!c.off_road);
    assert_eq!(c.halfplanes.len(), 2);
    let left = c.halfplanes.iter().find(|h| h.normal.y < 0.0).unwrap();
    assert!((left.signed_distance(Vec2::new(5.0, 1.0))).abs() < 1e-12);
    assert!(left.contains(Vec2::new(5.0, 0.99), 0.0));
    assert!(!left.contains(Vec2::new(5.0, 1.01), 0.0));
    // Road edge on the right is 1.5 m away.
    let right = c.halfplanes.iter().find(|h| h.normal.y > 0.0).unwrap();
    assert!((right.signed_distance(Vec2::new(5.0, -0.75))).abs() < 1e-12);

    let ped = moving_agent(2, "pedestrian", Vec2::new(30.0, -0.25), 0.0, 0.5);
    let c = contextual_constraints(&ped, &road, 2.0);
    assert!(c.halfplanes.is_empty() && !c.off_road);
}

#[test]
fn centred_car_on_wide_road_is_not_bound_by_context() {
    let wide = TWO_WAY.replace("width = 3.5", "width = 40.0").replace("\"oncoming\"", "\"edge\"");
    let road = RoadContext::from_toml(&wide).unwrap();
    let car = moving_agent(1, "car", Vec2::new(30.0, 0.0), 0.0, 0.5);
    let c = contextual_constraints(&car, &road, 2.0);
    assert_eq!(c.halfplanes.len(), 2);
    let s_max = car.profile.profile.s_max;
    for k in 0..36 {
        let v = Vec2::from_angle(k as f64 * 10f64.to_radians()) * s_max;
        assert!(c.halfplanes.iter().all(|h| h.contains(v, 0.0)));
    }
}

#[test]
fn lone_agent_converges_onto_straight_path() {
    let params = GammaParams::default();
    for name in ["pedestrian", "bicycle", "car"] {
        let path = Arc::new(RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(400.0, 0.0)]));
        let mut a = AgentState::new(1, profile(name), Vec2::new(2.0, 1.0), 0.3, Vec2::ZERO);
        a.inner.intention = IntentionHypothesis::Path(path);
        a.desired_speed = 0.8 * a.profile.profile.s_max;
        let mut world = vec![a];
        for _ in 0..300 {
            world = gamma_step(&world, None, &params, 0.1);
        }
        let a = &world[0];
        assert!((a.velocity.norm() - a.desired_speed).abs() < 0.05, "{name}: speed {}", a.velocity.norm());
        assert!(a.position.y.abs() < 0.1, "{name}: offset {}", a.position.y);
        assert!(a.velocity.y.abs() < 0.05);
    }
}
