//! The SQP solver on Rosenbrock's function restricted to a disc.

use pushopt::sqp::{solve, NlpProblem, SolverOptions};

struct Banana;

impl NlpProblem for Banana {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn lower_bounds(&self) -> Vec<f64> {
        vec![-2.0; 2]
    }
    fn upper_bounds(&self) -> Vec<f64> {
        vec![2.0; 2]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let r = x[1] - x[0] * x[0];
        g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * r;
        g[1] = 200.0 * r;
    }
    fn eq_constraints(&self, _: &[f64], _: &mut [f64]) {}
    fn eq_jacobian(&self, _: &[f64], _: &mut [f64]) {}
    fn ineq_constraints(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x[0] * x[0] + x[1] * x[1] - 1.5;
    }
    fn ineq_jacobian(&self, x: &[f64], j: &mut [f64]) {
        j[0] = 2.0 * x[0];
        j[1] = 2.0 * x[1];
    }
}

fn main() {
    let report = solve(&Banana, &[-1.0, 0.5], &SolverOptions::default());
    println!("{:?} after {} iterations", report.status, report.iterations);
    println!("x* = {:?}, f* = {:.6e}, multiplier {:.4}", report.x_opt, report.objective, report.ineq_multipliers[0]);
    for row in report.trace.iter().take(5) {
        println!("  it {:2}: f {:.4e} viol {:.1e} step {:.2}", row.iteration, row.objective, row.violation, row.alpha);
    }
}
