//! Pose algebra, finite-difference twists and region checks on the T object.

use pushopt::scenarios;
use pushopt::se2::{adjoint_from_frame, finite_difference_twist, point_in_polygon, PlanarPose, PlanarWrench};

fn main() {
    let a = PlanarPose::new(0.01, -0.02, 0.3);
    let b = PlanarPose::new(0.03, 0.01, -0.2);
    let xi = finite_difference_twist(&a, &b, 0.5).expect("positive step");
    let back = a.compose(&PlanarPose::exp(&xi.scaled(0.5)));
    println!("twist a->b over 0.5 s: {xi:?}");
    println!("exp round trip lands at {back:?}");

    let ad = adjoint_from_frame([0.02, 0.0], 0.0);
    let w = ad.apply(&PlanarWrench::new(0.0, 1.0, 0.0));
    println!("unit +y force at (0.02, 0) carries torque {:.3} N m", w.tau);

    let t = scenarios::t_shape();
    for p in [[0.0, 0.0], [0.0, 0.025], [0.05, -0.02]] {
        println!("{p:?} inside T: {} (region residual {:+.4})", point_in_polygon(p, &t), t.region_residual(p));
    }
}
