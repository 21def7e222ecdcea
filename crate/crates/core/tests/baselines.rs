mod common;

use gpmpc::baselines::{
    convex_hull, convex_hulls, coverage, hull_contains, linearized_propagation, monte_carlo_envelope, polygon_area,
    EllipsoidStage,
};
use gpmpc::experiments::Experiment;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn arb_cloud() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y)| [x, y]), 3..=100)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hull_contains_every_point(pts in arb_cloud()) {
        let hull = convex_hull(&pts);
        for p in &pts {
            prop_assert!(hull_contains(&hull, *p, 1e-9));
        }
        prop_assert_eq!(coverage(&hull, &pts, 1e-9), 1.0);
    }

    #[test]
    fn hull_is_convex_counter_clockwise_and_made_of_inputs(pts in arb_cloud()) {
        let hull = convex_hull(&pts);
        for v in &hull {
            prop_assert!(pts.contains(v));
        }
        if hull.len() >= 3 {
            for k in 0..hull.len() {
                let (a, b, c) = (hull[k], hull[(k + 1) % hull.len()], hull[(k + 2) % hull.len()]);
                prop_assert!(cross(a, b, c) > 0.0);
            }
            prop_assert!(polygon_area(&hull) > 0.0);
        }
    }

    #[test]
    fn hull_area_is_invariant_under_translation(pts in arb_cloud(), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let moved: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let a = polygon_area(&convex_hull(&pts));
        let b = polygon_area(&convex_hull(&moved));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn points_outside_the_bounding_box_are_rejected(pts in arb_cloud(), off in 0.1f64..5.0) {
        let hull = convex_hull(&pts);
        let xmax = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(!hull_contains(&hull, [xmax + off, 0.0], 1e-9));
    }
}

#[test]
fn degenerate_hulls() {
    assert_eq!(convex_hull(&[[1.0, 1.0], [1.0, 1.0]]), vec![[1.0, 1.0]]);
    let seg = convex_hull(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
    assert_eq!(seg.len(), 2);
    assert!(hull_contains(&seg, [0.5, 0.5], 1e-9));
    assert!(!hull_contains(&seg, [0.5, 0.6], 1e-9));
    let sq = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
    assert_eq!(sq.len(), 4);
    assert!((polygon_area(&sq) - 1.0).abs() < 1e-15);
}

#[test]
fn ellipse_area_matches_its_boundary_polygon() {
    let e = EllipsoidStage {
        center: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        cov: DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.1, 0.6, 0.5, 0.0, 0.1, 0.0, 1.0]),
        multiplier: 2.5,
    };
    let poly = e.boundary([0, 1], 4000);
    let rel = (polygon_area(&poly) - e.area([0, 1])).abs() / e.area([0, 1]);
    assert!(rel < 1e-5, "relative area error {rel}");
}

#[test]
fn monte_carlo_and_linearized_propagation_start_at_x0() {
    let exp = Experiment::build(common::small_pendulum()).unwrap();
    let u = exp.u_guess.clone();
    let mc = monte_carlo_envelope(&exp.ocp.system, &exp.model, &exp.x0, &u, 16, 3).unwrap();
    assert_eq!(mc.len(), 16);
    assert!(mc.iter().all(|t| t.len() == u.len() + 1 && t[0] == exp.x0));
    let again = monte_carlo_envelope(&exp.ocp.system, &exp.model, &exp.x0, &u, 16, 3).unwrap();
    assert_eq!(mc, again);
    let lin = linearized_propagation(&exp.ocp.system, &exp.model, &exp.x0, &u, 2.5).unwrap();
    assert_eq!(lin.len(), u.len() + 1);
    assert_eq!(lin[0].area([0, 1]), 0.0);
    for w in lin.windows(2) {
        assert!(w[1].cov.trace() >= w[0].cov.trace() - 1e-15);
    }
    let hulls = convex_hulls(&mc, [0, 1]);
    assert_eq!(hulls.len(), u.len() + 1);
}
