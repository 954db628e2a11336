//! Assemble the trajectory program for the L object and evaluate it at the
//! straight-line initializer.

use pushopt::nlp::{assemble, AssemblyOptions};
use pushopt::scenarios;
use pushopt::se2::PlanarPose;
use pushopt::sqp::NlpProblem;

fn main() {
    let problem = scenarios::problem("l_shape", PlanarPose::new(-0.02, 0.02, 0.0));
    for direct in [true, false] {
        let options = AssemblyOptions { direct_transcription: direct, free_time: true, use_kl: true };
        let bundle = assemble(&problem, options).expect("cones build at the start pose");
        let x = bundle.initializer();
        let mut ineq = vec![0.0; bundle.num_ineq()];
        bundle.ineq_constraints(&x, &mut ineq);
        let worst = ineq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "direct={direct}: {} variables, {} equalities, {} inequalities (max {worst:+.2e})",
            bundle.num_vars(),
            bundle.num_eq(),
            bundle.num_ineq()
        );
        println!("  objective {:?}", bundle.breakdown(&x));
    }
}
