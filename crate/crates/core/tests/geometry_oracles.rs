//! Randomised cross-checks of the geometry primitives against brute-force
//! references.

use crowdmotion_core::geometry::{
    convex_hull, minkowski_difference, solve_closest_feasible, velocity_obstacle, ConvexPolygon, HalfPlane, LpOutcome,
    Vec2, SOLVER_SLACK,
};
use proptest::prelude::*;

fn random_polygon() -> impl Strategy<Value = ConvexPolygon> {
    (3usize..8, 0.2f64..2.0, prop::collection::vec(0.0f64..1.0, 8), 0.0f64..6.3).prop_map(
        |(n, radius, jitter, phase)| {
            let pts: Vec<Vec2> = (0..n)
                .map(|i| {
                    let a = phase + std::f64::consts::TAU * (i as f64 + 0.8 * jitter[i]) / n as f64;
                    Vec2::from_angle(a) * radius
                })
                .collect();
            convex_hull(&pts).unwrap_or_else(|_| ConvexPolygon::regular(4, radius).unwrap())
        },
    )
}

fn vec2_in(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

/// Reference difference: hull of all vertex-pair differences.
fn brute_difference(b: &ConvexPolygon, a: &ConvexPolygon) -> ConvexPolygon {
    let mut pts = Vec::new();
    for &pb in b.vertices() {
        for &pa in a.vertices() {
            pts.push(pb - pa);
        }
    }
    convex_hull(&pts).unwrap()
}

proptest! {
    #[test]
    fn minkowski_matches_pairwise_hull(a in random_polygon(), b in random_polygon()) {
        let fast = minkowski_difference(&b, &a);
        let slow = brute_difference(&b, &a);
        prop_assert!(fast.hausdorff(&slow) < 1e-9);
    }

    #[test]
    fn offset_contains_padded_disk_and_keeps_edges(p in random_polygon(), m in 0.01f64..0.5) {
        let grown = p.offset(m);
        // Every point at distance m from p lies in the grown polygon.
        for k in 0..64 {
            let d = Vec2::from_angle(std::f64::consts::TAU * k as f64 / 64.0);
            let support = p.vertices().iter().copied().fold(p.vertices()[0], |best, v| if v.dot(d) > best.dot(d) { v } else { best });
            prop_assert!(grown.contains(support + d * m, 1e-9));
        }
        // Each edge moves out by exactly m along its own normal.
        for i in 0..p.len() {
            let n = p.edge_normal(i);
            let before = p.vertices()[i].dot(n);
            let after = grown.vertices()[i].dot(n);
            prop_assert!((after - before - m).abs() < 1e-9);
        }
    }

    #[test]
    fn minkowski_difference_is_antisymmetric(a in random_polygon(), b in random_polygon()) {
        let ba = minkowski_difference(&b, &a);
        let ab = minkowski_difference(&a, &b).reflect();
        prop_assert!(ba.hausdorff(&ab) < 1e-9);
    }

    #[test]
    fn hull_is_idempotent_and_contains_input(pts in prop::collection::vec(vec2_in(5.0), 3..60)) {
        if let Ok(h) = convex_hull(&pts) {
            let again = convex_hull(h.vertices()).unwrap();
            prop_assert_eq!(h.vertices(), again.vertices());
            for p in &pts {
                prop_assert!(h.contains(*p, 1e-9));
            }
        }
    }

    #[test]
    fn escape_lands_on_boundary(a in random_polygon(), b in random_polygon(),
                                offset in vec2_in(8.0), v in vec2_in(6.0)) {
        prop_assume!(offset.norm() > 4.5);
        let vo = velocity_obstacle(&a, Vec2::ZERO, &b, offset, 2.0).unwrap();
        let (u, n) = vo.closest_boundary_escape(v);
        prop_assert!((n.norm() - 1.0).abs() < 1e-9);
        let target = v + u;
        // A point on the boundary: inside (closed) but moving outward by a
        // hair leaves the set.
        prop_assert!(vo.contains(target - n * 1e-10));
        prop_assert!(!vo.contains(target + n * 1e-6));
    }

    #[test]
    fn feasible_output_satisfies_all_constraints(
        planes in prop::collection::vec((vec2_in(4.0), 0.0f64..6.3), 1..12),
        pref in vec2_in(8.0),
    ) {
        let hp: Vec<HalfPlane> = planes
            .iter()
            .map(|&(p, a)| HalfPlane::new(p, Vec2::from_angle(a)).unwrap())
            .collect();
        if let LpOutcome::Feasible(v) = solve_closest_feasible(pref, &hp, None) {
            for h in &hp {
                prop_assert!(h.contains(v, SOLVER_SLACK));
            }
        }
    }
}

#[test]
fn escape_distance_matches_dense_boundary_sampling() {
    // Deep inside the cone on its axis the nearest exit is the truncation
    // face or a leg; sample the boundary densely and compare.
    let sq = ConvexPolygon::rectangle(1.0, 1.0).unwrap();
    let vo = velocity_obstacle(&sq, Vec2::ZERO, &sq, Vec2::new(6.0, 0.0), 2.0).unwrap();
    let v = Vec2::new(4.0, 0.0);
    assert!(vo.contains(v));
    let (u, _) = vo.closest_boundary_escape(v);

    // Boundary: truncation face x = 2.5 (|y| <= 0.5) and legs through
    // (2.5, ±0.5) extending radially.
    let mut best = f64::INFINITY;
    for k in 0..=10_000 {
        let s = k as f64 / 10_000.0;
        let face = Vec2::new(2.5, -0.5 + s);
        best = best.min(face.distance(v));
        for sign in [-1.0, 1.0] {
            let tangent = Vec2::new(2.5, 0.5 * sign);
            let leg = tangent + tangent.normalized().unwrap() * (20.0 * s);
            best = best.min(leg.distance(v));
        }
    }
    assert!((u.norm() - best).abs() < 1e-3, "{} vs {}", u.norm(), best);
}
