//! Plan a T-object push with the entropy-relaxed planner and replay it.

use pushopt::planners::{plan_relaxed, RelaxedOptions};
use pushopt::rollout::rollout;
use pushopt::scenarios;
use pushopt::se2::PlanarPose;

fn main() {
    let problem = scenarios::problem("t_shape", PlanarPose::new(-0.02, -0.02, 0.0));
    let plan = plan_relaxed(&problem, &RelaxedOptions::default()).expect("goal is reachable");
    println!("status {:?} in {:.2} s, horizon {:.2} s", plan.status(), plan.wall_time_s, plan.horizon);
    println!("pusher schedule {:?}", plan.pusher_schedule);
    for (k, row) in plan.prob_schedule.iter().enumerate() {
        println!("  segment {k}: p = {row:.3?}");
    }
    let replay = rollout(&plan, &problem);
    println!(
        "replayed goal distance {:.2e} (cone residual {:.1e}, region residual {:.1e})",
        replay.final_distance,
        replay.max_mc_violation(),
        replay.max_state_violation()
    );
}
