use proptest::prelude::*;

use pushopt::contact::{generalized_friction_cone, mc_membership, motion_cone, ContactPoint, PusherContact};
use pushopt::nlp::{entropy_cost, kl_cost};
use pushopt::planners::{plan_relaxed, round_schedule, switches, RelaxedOptions};
use pushopt::rollout::distance;
use pushopt::scenarios;
use pushopt::se2::{finite_difference_twist, point_in_polygon, wrap_angle, PlanarPose, PlanarTwist};

fn pose() -> impl Strategy<Value = PlanarPose> {
    (-0.1..0.1f64, -0.1..0.1f64, -10.0..10.0f64).prop_map(|(x, y, t)| PlanarPose::new(x, y, t))
}

fn row(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, m).prop_filter_map("non-zero row", |r| {
        let s: f64 = r.iter().sum();
        (s > 1e-3).then(|| r.iter().map(|v| v / s).collect())
    })
}

proptest! {
    #[test]
    fn compose_with_inverse_is_identity(p in pose()) {
        let e = p.compose(&p.inverse());
        prop_assert!(e.x.abs() <= 1e-12 && e.y.abs() <= 1e-12 && e.theta.abs() <= 1e-12);
    }

    #[test]
    fn exp_of_finite_difference_reaches_target(a in pose(), b in pose(), dt in 0.05..3.0f64) {
        let xi = finite_difference_twist(&a, &b, dt).unwrap();
        let reached = a.compose(&PlanarPose::exp(&xi.scaled(dt)));
        prop_assert!((reached.x - b.x).abs() <= 1e-10);
        prop_assert!((reached.y - b.y).abs() <= 1e-10);
        prop_assert!(wrap_angle(reached.theta - b.theta).abs() <= 1e-10);
    }

    #[test]
    fn distance_is_a_pseudo_metric(a in pose(), b in pose(), c in pose(), ls in 0.1..2.0f64, lt in 0.01..1.0f64) {
        let d = |p: &PlanarPose, q: &PlanarPose| distance(p, q, ls, lt);
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        let turned = PlanarPose::new(a.x, a.y, a.theta + 2.0 * std::f64::consts::PI);
        prop_assert!(d(&a, &turned) <= 1e-12);
        if (a.x, a.y) != (b.x, b.y) {
            prop_assert!(d(&a, &b) > 0.0);
        }
    }

    #[test]
    fn entropy_vanishes_only_on_one_hot_rows(r in row(4), hot in 0..4usize) {
        let mut one_hot = vec![0.0; 4];
        one_hot[hot] = 1.0;
        prop_assert!(entropy_cost(&[one_hot]).abs() <= 1e-11);
        let peak = r.iter().cloned().fold(0.0, f64::max);
        if peak < 1.0 - 1e-6 {
            prop_assert!(entropy_cost(&[r]) < 0.0);
        }
    }

    #[test]
    fn kl_is_zero_for_repeated_rows(r in row(3), n in 1..5usize) {
        prop_assert!(kl_cost(&vec![r; n]).abs() <= 1e-9);
    }

    #[test]
    fn rounding_picks_the_first_maximum(rows in prop::collection::vec(row(4), 1..6)) {
        let s = round_schedule(&rows);
        prop_assert_eq!(s.len(), rows.len());
        for (r, &k) in rows.iter().zip(&s) {
            prop_assert!(r.iter().all(|&v| v <= r[k]));
            prop_assert!(r[..k].iter().all(|&v| v < r[k]));
        }
        prop_assert!(switches(&s) < rows.len().max(1));
    }

    #[test]
    fn cone_membership_is_scale_invariant(theta in -0.5..0.5f64, xi in prop::array::uniform3(-1.0..1.0f64), c in 1e-3..1e3f64) {
        let p = scenarios::problem("square", PlanarPose::new(0.0, 0.0, theta));
        let cone = motion_cone(&p.pushers[0], &p.support, &PlanarPose::new(0.0, 0.0, theta), &p.object, p.gravity, &p.cone).unwrap();
        let t = PlanarTwist::new(xi[0], xi[1], xi[2]);
        let a = mc_membership(&t, &cone);
        let b = mc_membership(&t.scaled(c), &cone);
        for (u, v) in a.iter().zip(&b) {
            if u.abs() > 1e-12 {
                prop_assert_eq!(u.signum(), v.signum());
            }
        }
    }

    #[test]
    fn wider_friction_nests_pusher_wrenches(
        t in -0.02..0.02f64,
        mu1 in 0.1..0.9f64,
        extra in 0.0..0.5f64,
        theta in -0.4..0.4f64,
    ) {
        let contact = ContactPoint { point: [t, -0.03], normal: [0.0, 1.0] };
        let narrow = PusherContact::new(vec![contact], mu1).unwrap();
        let wide = narrow.with_friction(mu1 + extra).unwrap();
        let p = scenarios::problem("square", PlanarPose::identity());
        let pose = PlanarPose::new(0.0, 0.0, theta);
        let cone = motion_cone(&narrow, &p.support, &pose, &p.object, p.gravity, &p.cone).unwrap();
        let g = generalized_friction_cone(&wide).unwrap();
        let [e0, e1] = [g.generators()[0].to_vector(), g.generators()[1].to_vector()];
        for w in cone.sources() {
            // planar cone: w = a e0 + b e1 with a, b >= 0
            let w = w.to_vector();
            let m = nalgebra::Matrix3x2::from_columns(&[e0, e1]);
            let ab = m.svd(true, true).solve(&w, 1e-14).unwrap();
            prop_assert!(ab.iter().all(|&v| v >= -1e-12));
            prop_assert!((m * ab - w).norm() <= 1e-9);
        }
    }

    #[test]
    fn regions_agree_with_polygon(x in -0.06..0.06f64, y in -0.06..0.06f64, which in 0..3usize) {
        let obj = scenarios::object(scenarios::OBJECT_NAMES[which]);
        let inside_region = obj.regions().iter().any(|r| r.max_residual([x, y]) < -1e-9);
        let on_edge = obj.regions().iter().any(|r| r.max_residual([x, y]).abs() <= 1e-9);
        if !on_edge {
            prop_assert_eq!(inside_region, point_in_polygon([x, y], &obj));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn relaxed_plans_have_sharp_simplex_rows(fx in 0.1..0.9f64, fy in 0.1..0.9f64) {
        let obj = scenarios::square();
        let (lo, hi) = obj.bounding_box();
        let start = PlanarPose::new(lo[0] + fx * (hi[0] - lo[0]), lo[1] + fy * (hi[1] - lo[1]), 0.0);
        let p = scenarios::problem("square", start);
        let plan = plan_relaxed(&p, &RelaxedOptions::default()).unwrap();
        for r in &plan.prob_schedule {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
        prop_assert_eq!(&plan.pusher_schedule, &round_schedule(&plan.prob_schedule));
        if plan.converged() {
            prop_assert!(entropy_cost(&plan.prob_schedule) >= -(p.segments as f64) * 1e-2);
        }
    }
}
