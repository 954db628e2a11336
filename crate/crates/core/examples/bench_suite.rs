//! A small experiment run: sampled starts, budget curve and ablation tables.

use pushopt::bench::{run_bench, ExperimentSpec, PlannerKind};

fn main() {
    let spec = ExperimentSpec {
        objects: vec!["square".into()],
        starts: 3,
        seed: 11,
        planners: vec![PlannerKind::Relaxed, PlannerKind::RrtMc],
        budgets: vec![0.1, 0.5, 2.0],
        q_study: false,
        ..Default::default()
    };
    let dir = std::env::temp_dir().join("pushopt-bench-example");
    let out = run_bench(&spec, &dir).expect("valid spec");
    for path in [Some(out.instances), Some(out.budget_curve), out.ablation] {
        let path = path.unwrap();
        println!("== {}", path.display());
        print!("{}", std::fs::read_to_string(&path).unwrap());
    }
}
