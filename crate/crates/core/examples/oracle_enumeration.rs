//! Compare the relaxed planner with exhaustive enumeration of pusher sequences.

use pushopt::planners::{assignment_count, plan_oracle_seeded, plan_relaxed, OracleOptions, PushPlan, RelaxedOptions};
use pushopt::scenarios;
use pushopt::se2::PlanarPose;

fn main() {
    let mut problem = scenarios::problem("square", PlanarPose::new(0.012, 0.018, 0.0));
    problem.segments = 2;
    println!("{} pusher sequences", assignment_count(problem.num_pushers(), problem.segments));
    let relaxed = plan_relaxed(&problem, &RelaxedOptions::default()).expect("reachable");
    let seeds: Vec<&PushPlan> = vec![&relaxed];
    let oracle = plan_oracle_seeded(&problem, &OracleOptions::default(), &seeds).expect("reachable");
    for (name, p) in [("relaxed", &relaxed), ("oracle", &oracle)] {
        println!("{name:>8}: schedule {:?} objective {:.6e} ({:.2} s)", p.pusher_schedule, p.objective.minlp(), p.wall_time_s);
    }
}
