//! Motion cones of the square's four pushers, and how pusher friction widens them.

use pushopt::contact::motion_cone;
use pushopt::scenarios;
use pushopt::se2::PlanarPose;

fn main() {
    let p = scenarios::problem("square", PlanarPose::identity());
    let names = ["left", "right", "bottom", "top"];
    for (name, pusher) in names.iter().zip(&p.pushers) {
        let cone = motion_cone(pusher, &p.support, &p.start, &p.object, p.gravity, &p.cone).expect("stable pushes exist");
        let axis = cone.generators().iter().fold([0.0; 3], |acc, g| [acc[0] + g.v1, acc[1] + g.v2, acc[2] + g.omega]);
        println!("{name:>6}: {:2} generators, mean direction {:+.3?}", cone.generators().len(), axis);
    }

    let left = &p.pushers[0];
    for mu in [0.2, 0.5, 0.9] {
        let cone = motion_cone(&left.with_friction(mu).unwrap(), &p.support, &p.start, &p.object, p.gravity, &p.cone).unwrap();
        let spread = cone
            .generators()
            .iter()
            .map(|g| g.v2.atan2(-g.v1).abs())
            .fold(0.0, f64::max);
        println!("left pusher mu_p {mu}: widest translation angle {:.1} deg", spread.to_degrees());
    }
}
