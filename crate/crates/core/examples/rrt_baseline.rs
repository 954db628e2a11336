//! The motion-cone RRT baseline and its anytime goal-distance curve.

use pushopt::planners::{search_rrt_mc, RrtConfig};
use pushopt::scenarios;
use pushopt::se2::PlanarPose;

fn main() {
    let problem = scenarios::problem("square", PlanarPose::new(-0.015, 0.01, 0.0));
    let cfg = RrtConfig { seed: 7, max_time: 5.0, ..Default::default() };
    let out = search_rrt_mc(&problem, &cfg).expect("valid problem");
    let s = &out.stats;
    println!("{} iterations, {} nodes, reached: {}", s.iterations, s.nodes, s.reached);
    for budget in [0.01, 0.1, 1.0, 5.0] {
        println!("  best distance after {budget:>5} s: {:.3} mm", 1e3 * s.distance_at(budget));
    }
    println!("{} pushes, {} switches", out.plan.num_segments(), pushopt::planners::count_switches(&out.plan));
}
