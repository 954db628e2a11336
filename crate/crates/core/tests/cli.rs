use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn pushopt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushopt"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("PUSHOPT_THREADS", "1")
        .output()
        .expect("binary runs")
}

/// The square problem with absolute file references and overrides applied.
fn square_problem(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let base = scenes().join("square");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(base.join("problem.json")).unwrap()).unwrap();
    let abs = |rel: &Value| Value::String(base.join(rel.as_str().unwrap()).display().to_string());
    v["object"] = abs(&v["object"]);
    v["support"] = abs(&v["support"]);
    v["pushers"] = Value::Array(v["pushers"].as_array().unwrap().iter().map(abs).collect());
    edit(&mut v);
    let path = dir.join("problem.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn plan_writes_plan_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let problem = scenes().join("square/problem.json");
    let o = pushopt(&["plan", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["schema"], "plan_v1");
    assert_eq!(plan["pusher_schedule"].as_array().unwrap().len(), 3);
    let replay: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rollout.json")).unwrap()).unwrap();
    assert!(replay["final_distance"].as_f64().unwrap() <= 1e-4);
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,pusher,x_m,y_m,theta_rad"));
    assert_eq!(traj.lines().count(), 5);
}

#[test]
fn trace_flag_writes_solver_trace() {
    let dir = tempfile::tempdir().unwrap();
    let problem = scenes().join("square/problem.json");
    let o = pushopt(&["--trace", "plan", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("sqp_trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);
}

#[test]
fn malformed_json_cites_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"object\": \"o.json\", \"pushers\": [}").unwrap();
    let o = pushopt(&["plan", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("byte 33"), "{}", stderr(&o));
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let problem = square_problem(dir.path(), |v| v["N"] = Value::from(0));
    let o = pushopt(&["plan", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("N"), "{}", stderr(&o));
}

#[test]
fn unreachable_goal_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let problem = square_problem(dir.path(), |v| v["goal"] = serde_json::json!([0.2, 0.0, 0.0]));
    let o = pushopt(&["plan", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn oversized_oracle_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let problem = square_problem(dir.path(), |v| v["N"] = Value::from(8));
    let o = pushopt(&["oracle", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("65536"), "{}", stderr(&o));
}

#[test]
fn rrt_subcommand_plans() {
    let dir = tempfile::tempdir().unwrap();
    let problem = scenes().join("square/problem.json");
    let o = pushopt(&["--seed", "3", "rrt", problem.to_str().unwrap(), "--max-time", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["planner_tag"], "RrtMc");
}

#[test]
fn exported_cone_reloads_consistently() {
    let dir = tempfile::tempdir().unwrap();
    let problem = scenes().join("square/problem.json");
    let o = pushopt(&["export-cone", problem.to_str().unwrap(), "--pusher", "2", "--pose", "0.0,0.01,0.2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("cone.csv")).unwrap();
    let (mut gens, mut normals) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.unwrap();
        let v: [f64; 3] = [3, 4, 5].map(|i| rec[i].parse().unwrap());
        match &rec[1] {
            "generator" => gens.push(v),
            "halfspace" => normals.push(v),
            other => panic!("unexpected kind {other}"),
        }
    }
    assert!(gens.len() >= 2);
    for g in &gens {
        for n in &normals {
            assert!(n[0] * g[0] + n[1] * g[1] + n[2] * g[2] <= 1e-9);
        }
    }
}

#[test]
fn zero_support_friction_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let support = dir.path().join("support.json");
    fs::write(&support, r#"{"mu_s": 0.0, "F_N": 20.0, "r": 0.02, "e": 0.6}"#).unwrap();
    let problem = square_problem(dir.path(), |v| v["support"] = Value::String(support.display().to_string()));
    let o = pushopt(&["export-cone", problem.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mu_s"), "{}", stderr(&o));
}

/// CSV text without the wall-clock columns.
fn timeless(path: &Path) -> String {
    let mut r = csv::Reader::from_path(path).unwrap();
    let keep: Vec<usize> = r.headers().unwrap().iter().enumerate().filter(|(_, h)| !h.contains("time_s")).map(|(i, _)| i).collect();
    let mut out = String::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        let cells: Vec<&str> = keep.iter().map(|&i| &rec[i]).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[test]
fn bench_is_reproducible_with_unit_headers() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"objects": ["square"], "starts": 2, "seed": 5, "planners": ["relaxed"],
            "budgets": [0.5, 5.0], "ablation": true, "q_study": true, "mu_grid": [0.6]}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pushopt(&["bench", spec.to_str().unwrap()], out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["instances.csv", "ablation.csv", "q_curve.csv"] {
        assert_eq!(timeless(&a.join(name)), timeless(&b.join(name)), "{name}");
    }
    let header = |n: &str| fs::read_to_string(a.join(n)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("budget_curve.csv"), "planner,object,budget_s,median_goal_distance_mm");
    assert!(header("instances.csv").contains("goal_distance_mm"));
    let ablation = fs::read_to_string(a.join("ablation.csv")).unwrap();
    for set in ["xi_p,", "xi_p_T,", "xi_p_P,", "xi_p_P_T,"] {
        assert_eq!(ablation.lines().filter(|l| l.starts_with(set)).count(), 1, "{set}");
    }
    let rows = fs::read_to_string(a.join("instances.csv")).unwrap();
    assert!(rows.lines().skip(1).all(|l| l.contains(",true,")), "{rows}");
}

#[test]
fn bench_rejects_decreasing_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"budgets": [1.0, 0.5]}"#).unwrap();
    let o = pushopt(&["bench", spec.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budgets"));
}
