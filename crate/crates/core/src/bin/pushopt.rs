#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pushopt::bench::{load_spec, run_bench, thread_cap, write_csv};
use pushopt::contact::motion_cone;
use pushopt::error::{ConfigError, PlanningError};
use pushopt::io::load_problem;
use pushopt::planners::{plan_oracle, plan_relaxed, plan_rrt_mc, OracleOptions, PushPlan, RelaxedOptions, RrtConfig};
use pushopt::rollout::rollout;
use pushopt::se2::PlanarPose;

#[derive(Parser)]
#[command(name = "pushopt", version, about = "Plan and benchmark prehensile pushes")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Write the per-iteration solver trace as CSV.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Relaxed,
    Oracle,
    Rrt,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan one problem and replay the result.
    Plan {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "relaxed")]
        planner: Planner,
        /// Add the KL smoothing term.
        #[arg(long)]
        kl: bool,
    },
    /// Run an experiment spec and write its CSV tables.
    Bench { spec: PathBuf },
    /// Enumerate every pusher sequence.
    Oracle { problem: PathBuf },
    /// Motion-cone RRT baseline.
    Rrt {
        problem: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        max_time: f64,
    },
    /// Motion cone generators and halfspaces at a pose.
    ExportCone {
        problem: PathBuf,
        /// Pusher index; all pushers when omitted.
        #[arg(long)]
        pusher: Option<usize>,
        /// Object pose `x,y,theta`; the problem's start when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        pose: Option<Vec<f64>>,
    },
}

enum Failure {
    Config(String),
    Planning(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PlanningError> for Failure {
    fn from(e: PlanningError) -> Self {
        match e {
            PlanningError::Config(c) => Failure::Config(c.to_string()),
            PlanningError::OracleTooLarge(_) => Failure::Config(format!("N: {e}")),
            other => Failure::Planning(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct PoseRow {
    step: usize,
    pusher: Option<usize>,
    x_m: f64,
    y_m: f64,
    theta_rad: f64,
    v1_m_s: f64,
    v2_m_s: f64,
    omega_rad_s: f64,
}

#[derive(Serialize)]
struct ConeRow {
    pusher: usize,
    kind: &'static str,
    index: usize,
    v1: f64,
    v2: f64,
    omega: f64,
}

fn io_err(path: &Path, source: std::io::Error) -> ConfigError {
    ConfigError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_plan(cli: &Cli, plan: &PushPlan, problem: &pushopt::nlp::PushProblem) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out_dir).map_err(|e| io_err(&cli.out_dir, e))?;
    let path = cli.out_dir.join("plan.json");
    fs::write(&path, plan.to_json()).map_err(|e| io_err(&path, e))?;
    let replay = rollout(plan, problem);
    let path = cli.out_dir.join("rollout.json");
    let text = serde_json::to_string_pretty(&replay).expect("rollout serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    let rows: Vec<PoseRow> = plan
        .poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let xi = plan.twists_selected.get(k).copied().unwrap_or([0.0; 3]);
            PoseRow {
                step: k,
                pusher: plan.pusher_schedule.get(k).copied(),
                x_m: p.x,
                y_m: p.y,
                theta_rad: p.theta,
                v1_m_s: xi[0],
                v2_m_s: xi[1],
                omega_rad_s: xi[2],
            }
        })
        .collect();
    write_csv(&cli.out_dir.join("trajectory.csv"), &rows)?;
    println!(
        "{:?}: status {:?}, goal distance {:.3e}, schedule {:?}, {:.2}s",
        plan.planner_tag,
        plan.status(),
        plan.final_distance,
        plan.pusher_schedule,
        plan.wall_time_s
    );
    if plan.converged() {
        Ok(())
    } else {
        Err(Failure::Planning(format!("solver stopped with {:?}", plan.status())))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let solver_trace = cli.trace.then(|| cli.out_dir.join("sqp_trace.csv"));
    if solver_trace.is_some() {
        fs::create_dir_all(&cli.out_dir).map_err(|e| io_err(&cli.out_dir, e))?;
    }
    match &cli.cmd {
        Cmd::Plan { problem, planner, kl } => {
            let (p, mut assembly) = load_problem(problem)?;
            assembly.use_kl |= *kl;
            let plan = match planner {
                Planner::Relaxed => {
                    let mut opts = RelaxedOptions {
                        assembly,
                        seed: cli.seed,
                        ..Default::default()
                    };
                    opts.solver.trace_path = solver_trace;
                    plan_relaxed(&p, &opts)?
                }
                Planner::Oracle => {
                    let mut opts = OracleOptions {
                        assembly,
                        seed: cli.seed,
                        ..Default::default()
                    };
                    opts.solver.trace_path = solver_trace;
                    plan_oracle(&p, &opts)?
                }
                Planner::Rrt => {
                    let cfg = RrtConfig {
                        seed: cli.seed,
                        ..Default::default()
                    };
                    plan_rrt_mc(&p, &cfg)?.0
                }
            };
            write_plan(cli, &plan, &p)
        }
        Cmd::Oracle { problem } => {
            let (p, assembly) = load_problem(problem)?;
            let mut opts = OracleOptions {
                assembly,
                seed: cli.seed,
                ..Default::default()
            };
            opts.solver.trace_path = solver_trace;
            let plan = plan_oracle(&p, &opts)?;
            write_plan(cli, &plan, &p)
        }
        Cmd::Rrt { problem, max_time } => {
            if !(*max_time > 0.0) {
                return Err(Failure::Config("max_time: must be positive".into()));
            }
            let (p, _) = load_problem(problem)?;
            let cfg = RrtConfig {
                seed: cli.seed,
                max_time: *max_time,
                ..Default::default()
            };
            let (plan, stats) = plan_rrt_mc(&p, &cfg)?;
            println!("rrt: {} iterations, {} nodes", stats.iterations, stats.nodes);
            write_plan(cli, &plan, &p)
        }
        Cmd::Bench { spec } => {
            let mut spec = load_spec(spec)?;
            spec.seed = if cli.seed != 0 { cli.seed } else { spec.seed };
            spec.relaxed.solver.trace_path = None;
            let dir = spec.out_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
            let out = run_bench(&spec, &dir)?;
            println!("wrote {} and {}", out.instances.display(), out.budget_curve.display());
            Ok(())
        }
        Cmd::ExportCone { problem, pusher, pose } => {
            let (p, _) = load_problem(problem)?;
            let pose = match pose {
                Some(v) if v.len() != 3 => return Err(Failure::Config(format!("pose: expected x,y,theta, got {} values", v.len()))),
                Some(v) => PlanarPose::try_new(v[0], v[1], v[2]).map_err(|e| ConfigError::field("pose", e.to_string()))?,
                None => p.start,
            };
            let which: Vec<usize> = match pusher {
                Some(k) if *k >= p.num_pushers() => {
                    return Err(Failure::Config(format!("pusher: index {k} out of range 0..{}", p.num_pushers())))
                }
                Some(k) => vec![*k],
                None => (0..p.num_pushers()).collect(),
            };
            let mut rows = Vec::new();
            for k in which {
                let cone = motion_cone(&p.pushers[k], &p.support, &pose, &p.object, p.gravity, &p.cone)
                    .map_err(|e| Failure::Planning(format!("pusher {k}: {e}")))?;
                for (i, g) in cone.generators().iter().enumerate() {
                    rows.push(ConeRow { pusher: k, kind: "generator", index: i, v1: g.v1, v2: g.v2, omega: g.omega });
                }
                for (i, h) in cone.halfspaces().iter().enumerate() {
                    rows.push(ConeRow { pusher: k, kind: "halfspace", index: i, v1: h[0], v2: h[1], omega: h[2] });
                }
            }
            fs::create_dir_all(&cli.out_dir).map_err(|e| io_err(&cli.out_dir, e))?;
            let path = cli.out_dir.join("cone.csv");
            write_csv(&path, &rows)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Planning(msg)) => {
            eprintln!("planning failed: {msg}");
            ExitCode::from(2)
        }
    }
}
