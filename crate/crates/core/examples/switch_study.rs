//! Pusher switches with and without the KL smoothing term across pusher friction.

use pushopt::nlp::AssemblyOptions;
use pushopt::planners::{count_switches, plan_relaxed, RelaxedOptions};
use pushopt::rollout::q_metric;
use pushopt::scenarios;
use pushopt::se2::PlanarPose;

fn main() {
    let starts = [(-0.015, 0.01), (0.01, 0.02), (-0.02, -0.02), (0.0, 0.0)];
    for mu in [0.4, 0.9] {
        let (mut plain, mut kl) = (0, 0);
        for (x, y) in starts {
            let p = scenarios::problem("square", PlanarPose::new(x, y, 0.0)).with_pusher_friction(mu).unwrap();
            for (use_kl, total) in [(false, &mut plain), (true, &mut kl)] {
                let opts = RelaxedOptions { assembly: AssemblyOptions { use_kl, ..Default::default() }, ..Default::default() };
                if let Ok(plan) = plan_relaxed(&p, &opts) {
                    *total += count_switches(&plan);
                }
            }
        }
        match q_metric(plain, kl) {
            Some(q) => println!("mu_p {mu}: {plain} -> {kl} switches, Q = {q:.1}%"),
            None => println!("mu_p {mu}: no switches without KL"),
        }
    }
}
