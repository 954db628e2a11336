//! Experiment harness: sampled start suites, goal-distance budget curves,
//! the decision-variable ablation and the switch-reduction study. Every
//! table is written as CSV with units in the header.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::io::read_json;
use crate::nlp::{AssemblyOptions, PushProblem};
use crate::planners::{count_switches, plan_oracle_seeded, plan_relaxed, search_rrt_mc, OracleOptions, PushPlan, RelaxedOptions, RrtConfig};
use crate::rollout::q_metric;
use crate::scenarios;
use crate::se2::PlanarPose;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "PUSHOPT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Relaxed,
    RrtMc,
    Oracle,
}

impl PlannerKind {
    pub fn label(self) -> &'static str {
        match self {
            PlannerKind::Relaxed => "relaxed",
            PlannerKind::RrtMc => "rrt_mc",
            PlannerKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub objects: Vec<String>,
    pub starts: usize,
    pub seed: u64,
    /// Sample start orientations instead of copying the goal's.
    pub random_theta: bool,
    /// Clearance of sampled starts from the object boundary, metres.
    pub margin: f64,
    pub planners: Vec<PlannerKind>,
    /// Wall-clock budgets for the goal-distance curve, seconds.
    pub budgets: Vec<f64>,
    /// Pusher friction values of the switch-reduction study.
    pub mu_grid: Vec<f64>,
    pub ablation: bool,
    pub q_study: bool,
    pub relaxed: RelaxedOptions,
    pub rrt: RrtConfig,
    pub oracle: OracleOptions,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            objects: scenarios::OBJECT_NAMES.iter().map(|s| s.to_string()).collect(),
            starts: 20,
            seed: 0,
            random_theta: false,
            margin: 0.002,
            planners: vec![PlannerKind::Relaxed, PlannerKind::RrtMc],
            budgets: vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            mu_grid: vec![0.4, 0.6, 0.8, 0.9, 0.99],
            ablation: true,
            q_study: true,
            relaxed: RelaxedOptions::default(),
            rrt: RrtConfig::default(),
            oracle: OracleOptions::default(),
            out_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.starts == 0 {
            return Err(ConfigError::field("starts", "must be at least 1"));
        }
        if self.objects.is_empty() {
            return Err(ConfigError::field("objects", "must name at least one object"));
        }
        if let Some(bad) = self.objects.iter().find(|o| scenarios::canonical(o).is_none()) {
            return Err(ConfigError::field("objects", format!("unknown object {bad:?}")));
        }
        if self.budgets.iter().any(|b| !(*b > 0.0)) || self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::field("budgets", "must be positive and strictly increasing"));
        }
        if self.mu_grid.iter().any(|m| !(*m > 0.0)) {
            return Err(ConfigError::field("mu_grid", "friction values must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(ConfigError::field("margin", "must be non-negative"));
        }
        Ok(())
    }
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let spec: ExperimentSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

/// Worker count from `PUSHOPT_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub object: &'static str,
    pub index: usize,
    pub start: PlanarPose,
}

impl Instance {
    pub fn problem(&self) -> PushProblem {
        scenarios::problem(self.object, self.start)
    }
}

/// Start suite per object; each object draws from its own stream so adding
/// objects leaves the others' starts unchanged.
pub fn sample_instances(spec: &ExperimentSpec) -> Vec<Instance> {
    let mut out = Vec::new();
    for name in &spec.objects {
        let object = scenarios::canonical(name).expect("validated object name");
        let stream = scenarios::OBJECT_NAMES.iter().position(|n| *n == object).unwrap() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let obj = scenarios::object(object);
        let goal = scenarios::goal_for(object);
        for index in 0..spec.starts {
            let start = scenarios::sample_start(&obj, &goal, spec.margin, spec.random_theta, &mut rng);
            out.push(Instance { object, index, start });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub object: String,
    pub instance: usize,
    pub planner: String,
    pub start_x_mm: f64,
    pub start_y_mm: f64,
    pub start_theta_rad: f64,
    pub goal_distance_mm: f64,
    /// Goal distance at or below the tolerance.
    pub pass: bool,
    pub status: String,
    pub switches: usize,
    pub objective: f64,
    pub time_s: f64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRow {
    pub planner: String,
    pub object: String,
    pub budget_s: f64,
    pub median_goal_distance_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variables: String,
    pub object: String,
    pub median_time_s: f64,
    pub median_objective: f64,
    pub goal_reached: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QRow {
    pub mu_p: f64,
    /// Empty when no plain plan switched.
    pub mean_q_pct: Option<f64>,
    pub switches_plain: usize,
    pub switches_kl: usize,
    pub pairs: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

fn mm(metres: f64) -> f64 {
    1e3 * metres
}

fn plan_row(inst: &Instance, planner: &str, problem: &PushProblem, plan: &PushPlan) -> InstanceRow {
    InstanceRow {
        object: inst.object.to_string(),
        instance: inst.index,
        planner: planner.to_string(),
        start_x_mm: mm(inst.start.x),
        start_y_mm: mm(inst.start.y),
        start_theta_rad: inst.start.theta,
        goal_distance_mm: mm(plan.final_distance),
        pass: plan.final_distance <= problem.epsilon,
        status: format!("{:?}", plan.status()),
        switches: count_switches(plan),
        objective: plan.objective.total,
        time_s: plan.wall_time_s,
        error: String::new(),
    }
}

fn failed_row(inst: &Instance, planner: &str, problem: &PushProblem, err: String) -> InstanceRow {
    log::warn!("{} #{} {planner}: {err}", inst.object, inst.index);
    InstanceRow {
        object: inst.object.to_string(),
        instance: inst.index,
        planner: planner.to_string(),
        start_x_mm: mm(inst.start.x),
        start_y_mm: mm(inst.start.y),
        start_theta_rad: inst.start.theta,
        goal_distance_mm: mm(problem.distance(&problem.start)),
        pass: false,
        status: "Failed".into(),
        switches: 0,
        objective: f64::NAN,
        time_s: 0.0,
        error: err,
    }
}

/// Goal distance each planner holds after every budget, per instance.
struct Curve {
    planner: PlannerKind,
    object: &'static str,
    distances: Vec<f64>,
}

fn run_instance(spec: &ExperimentSpec, inst: &Instance) -> (Vec<InstanceRow>, Vec<Curve>) {
    let problem = inst.problem();
    let start_d = problem.distance(&problem.start);
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut relaxed_plan = None;
    for &kind in &spec.planners {
        match kind {
            PlannerKind::Relaxed => {
                let opts = RelaxedOptions {
                    seed: spec.seed ^ inst.index as u64,
                    ..spec.relaxed.clone()
                };
                match plan_relaxed(&problem, &opts) {
                    Ok(plan) => {
                        rows.push(plan_row(inst, kind.label(), &problem, &plan));
                        let d = if plan.converged() { plan.final_distance } else { start_d };
                        curves.push(Curve {
                            planner: kind,
                            object: inst.object,
                            distances: spec.budgets.iter().map(|&b| if plan.wall_time_s <= b { d } else { start_d }).collect(),
                        });
                        relaxed_plan = Some(plan);
                    }
                    Err(e) => {
                        rows.push(failed_row(inst, kind.label(), &problem, e.to_string()));
                        curves.push(Curve {
                            planner: kind,
                            object: inst.object,
                            distances: vec![start_d; spec.budgets.len()],
                        });
                    }
                }
            }
            PlannerKind::RrtMc => {
                let cfg = RrtConfig {
                    seed: spec.seed ^ inst.index as u64,
                    max_time: spec.budgets.last().copied().unwrap_or(spec.rrt.max_time),
                    ..spec.rrt.clone()
                };
                match search_rrt_mc(&problem, &cfg) {
                    Ok(out) => {
                        rows.push(plan_row(inst, kind.label(), &problem, &out.plan));
                        curves.push(Curve {
                            planner: kind,
                            object: inst.object,
                            distances: spec.budgets.iter().map(|&b| out.stats.distance_at(b)).collect(),
                        });
                    }
                    Err(e) => rows.push(failed_row(inst, kind.label(), &problem, e.to_string())),
                }
            }
            PlannerKind::Oracle => {
                let seeds: Vec<&PushPlan> = relaxed_plan.iter().collect();
                match plan_oracle_seeded(&problem, &spec.oracle, &seeds) {
                    Ok(plan) => {
                        if let Some(r) = &relaxed_plan {
                            if plan.objective.minlp() > r.objective.minlp() + 1e-12 {
                                log::error!("{} #{}: oracle objective exceeds the relaxed plan's", inst.object, inst.index);
                            }
                        }
                        rows.push(plan_row(inst, kind.label(), &problem, &plan));
                    }
                    Err(e) => rows.push(failed_row(inst, kind.label(), &problem, e.to_string())),
                }
            }
        }
    }
    (rows, curves)
}

/// Planner rows for every instance plus the median goal-distance curve.
pub fn run_suite(spec: &ExperimentSpec, instances: &[Instance]) -> (Vec<InstanceRow>, Vec<BudgetRow>) {
    let results: Vec<(Vec<InstanceRow>, Vec<Curve>)> = instances.par_iter().map(|i| run_instance(spec, i)).collect();
    let rows = results.iter().flat_map(|r| r.0.iter().cloned()).collect();
    let curves: Vec<&Curve> = results.iter().flat_map(|r| r.1.iter()).collect();
    let mut budget = Vec::new();
    for &kind in &spec.planners {
        for name in &spec.objects {
            let object = scenarios::canonical(name).expect("validated object name");
            for (k, &b) in spec.budgets.iter().enumerate() {
                let mut d: Vec<f64> = curves
                    .iter()
                    .filter(|c| c.planner == kind && c.object == object)
                    .map(|c| c.distances[k])
                    .collect();
                if d.is_empty() {
                    continue;
                }
                budget.push(BudgetRow {
                    planner: kind.label().into(),
                    object: object.into(),
                    budget_s: b,
                    median_goal_distance_mm: mm(median(&mut d)),
                });
            }
        }
    }
    (rows, budget)
}

/// The four decision-variable sets: twists and probabilities, optionally
/// with poses (direct transcription) and a free horizon.
pub const VARIABLE_SETS: [(&str, bool, bool); 4] = [
    ("xi_p", false, false),
    ("xi_p_T", false, true),
    ("xi_p_P", true, false),
    ("xi_p_P_T", true, true),
];

/// Time, objective and goal flag of one solve.
type Outcome = (f64, f64, bool);

pub fn run_ablation(spec: &ExperimentSpec, instances: &[Instance]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for (label, direct, free) in VARIABLE_SETS {
        let assembly = AssemblyOptions {
            direct_transcription: direct,
            free_time: free,
            use_kl: spec.relaxed.assembly.use_kl,
        };
        let opts = RelaxedOptions {
            assembly,
            ..spec.relaxed.clone()
        };
        let results: Vec<(&str, Option<Outcome>)> = instances
            .par_iter()
            .map(|inst| {
                let p = inst.problem();
                let r = plan_relaxed(&p, &opts).map(|plan| (plan.wall_time_s, plan.objective.total, plan.final_distance <= p.epsilon));
                if let Err(e) = &r {
                    log::warn!("{} #{} ablation {label}: {e}", inst.object, inst.index);
                }
                (inst.object, r.ok())
            })
            .collect();
        for name in &spec.objects {
            let object = scenarios::canonical(name).expect("validated object name");
            let mine: Vec<(f64, f64, bool)> = results.iter().filter(|r| r.0 == object).filter_map(|r| r.1).collect();
            let mut t: Vec<f64> = mine.iter().map(|r| r.0).collect();
            let mut o: Vec<f64> = mine.iter().map(|r| r.1).collect();
            rows.push(AblationRow {
                variables: label.into(),
                object: object.into(),
                median_time_s: median(&mut t),
                median_objective: median(&mut o),
                goal_reached: mine.iter().filter(|r| r.2).count(),
                instances: results.iter().filter(|r| r.0 == object).count(),
            });
        }
    }
    rows
}

/// Pooled switch reduction from the KL term at each pusher friction value.
pub fn run_q_study(spec: &ExperimentSpec, instances: &[Instance]) -> Vec<QRow> {
    spec.mu_grid
        .iter()
        .map(|&mu| {
            let pairs: Vec<(usize, usize)> = instances
                .par_iter()
                .filter_map(|inst| {
                    let p = inst.problem().with_pusher_friction(mu).ok()?;
                    let plain = RelaxedOptions {
                        assembly: AssemblyOptions {
                            use_kl: false,
                            ..spec.relaxed.assembly
                        },
                        ..spec.relaxed.clone()
                    };
                    let kl = RelaxedOptions {
                        assembly: AssemblyOptions {
                            use_kl: true,
                            ..spec.relaxed.assembly
                        },
                        ..spec.relaxed.clone()
                    };
                    match (plan_relaxed(&p, &plain), plan_relaxed(&p, &kl)) {
                        (Ok(a), Ok(b)) => Some((count_switches(&a), count_switches(&b))),
                        (a, b) => {
                            let e = a.err().or(b.err()).map(|e| e.to_string()).unwrap_or_default();
                            log::warn!("{} #{} q study at mu {mu}: {e}", inst.object, inst.index);
                            None
                        }
                    }
                })
                .collect();
            let plain: usize = pairs.iter().map(|p| p.0).sum();
            let kl: usize = pairs.iter().map(|p| p.1).sum();
            QRow {
                mu_p: mu,
                mean_q_pct: q_metric(plain, kl),
                switches_plain: plain,
                switches_kl: kl,
                pairs: pairs.len(),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ConfigError> {
    let io_err = |e: std::io::Error| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(e.into()))?;
    }
    w.flush().map_err(io_err)
}

/// Paths of the tables written by [`run_bench`].
#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub instances: PathBuf,
    pub budget_curve: PathBuf,
    pub ablation: Option<PathBuf>,
    pub q_curve: Option<PathBuf>,
}

/// Runs every enabled experiment, writing each table as soon as it is done.
pub fn run_bench(spec: &ExperimentSpec, out_dir: &Path) -> Result<BenchOutput, ConfigError> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| ConfigError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let instances = sample_instances(spec);
    log::info!("bench: {} instances", instances.len());

    let (rows, budget) = run_suite(spec, &instances);
    let out = BenchOutput {
        instances: out_dir.join("instances.csv"),
        budget_curve: out_dir.join("budget_curve.csv"),
        ablation: spec.ablation.then(|| out_dir.join("ablation.csv")),
        q_curve: spec.q_study.then(|| out_dir.join("q_curve.csv")),
    };
    write_csv(&out.instances, &rows)?;
    write_csv(&out.budget_curve, &budget)?;
    if let Some(path) = &out.ablation {
        write_csv(path, &run_ablation(spec, &instances))?;
    }
    if let Some(path) = &out.q_curve {
        write_csv(path, &run_q_study(spec, &instances))?;
    }
    Ok(out)
}
