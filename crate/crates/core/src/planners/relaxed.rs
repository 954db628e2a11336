use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{plan_from_state, round_schedule, start_goal_check, PlannerTag, PushPlan};
use crate::error::{ContactError, PlanningError};
use crate::nlp::{entropy_cost, kl_cost, AssemblyOptions, Assignment, NlpBundle, ObjectiveBreakdown, PushProblem, TrajectoryState};
use crate::contact::motion_cone;
use crate::scenarios::sample_start;
use crate::se2::{PlanarPose, PlanarTwist};
use crate::sqp::{solve_warm, NlpProblem, SolveReport, SolveStatus, SolverOptions, TraceRow};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxedOptions {
    pub assembly: AssemblyOptions,
    pub solver: SolverOptions,
    /// Cap on cone rebuilds around the inner solve.
    pub max_outer: usize,
    /// Motion-cone residual accepted at the fixed point of the rebuilds.
    pub cone_tol: f64,
    /// Extra starts with a random preferred pusher per segment.
    pub restarts: usize,
    /// Stop at the first converged plan within the goal tolerance.
    pub first_converged: bool,
    pub seed: u64,
    /// Violation of the rounded constraints above which a repair solve runs.
    pub repair_tol: f64,
    /// Re-solve the rounded schedule once from interpolated waypoints and
    /// keep the cheaper of the two.
    pub polish: bool,
}

impl Default for RelaxedOptions {
    fn default() -> Self {
        RelaxedOptions {
            assembly: AssemblyOptions::default(),
            solver: SolverOptions::default(),
            max_outer: 12,
            cone_tol: 1e-9,
            restarts: 8,
            first_converged: true,
            seed: 0,
            repair_tol: 1e-9,
            polish: true,
        }
    }
}

pub(crate) struct Sequential {
    pub state: TrajectoryState,
    pub report: SolveReport,
    pub outer: usize,
    pub cone_residual: f64,
}

/// Solves with cones frozen at the current poses, rebuilds them at the new
/// poses and repeats until the twists sit inside the rebuilt cones.
pub(crate) fn solve_sequential(
    problem: &PushProblem,
    assembly: AssemblyOptions,
    assignment: &Assignment,
    init: TrajectoryState,
    solver: &SolverOptions,
    max_outer: usize,
    cone_tol: f64,
) -> Result<Sequential, ContactError> {
    let inner = SolverOptions {
        trace_path: None,
        ..solver.clone()
    };
    let mut state = init;
    let mut hessian: Option<Vec<f64>> = None;
    let mut trace: Vec<TraceRow> = Vec::new();
    let (mut iterations, mut wall) = (0, 0.0);
    let mut outer = 0;
    loop {
        outer += 1;
        let bundle = NlpBundle::new(problem, assembly, assignment.clone(), &state.poses)?;
        let x0 = bundle.pack(&state);
        let mut report = solve_warm(&bundle, &x0, &inner, hessian.as_deref());
        state = bundle.unpack(&report.x_opt);
        let rebuilt = NlpBundle::new(problem, assembly, assignment.clone(), &state.poses)?;
        let x = rebuilt.pack(&state);
        let cone_residual = rebuilt.max_cone_residual(&x).max(0.0);
        iterations += report.iterations;
        wall += report.wall_time_s;
        let offset = trace.last().map_or(0, |r| r.iteration);
        trace.extend(report.trace.drain(..).map(|mut r| {
            r.iteration += offset;
            r
        }));
        hessian = Some(std::mem::take(&mut report.hessian));
        let done = (report.converged() && cone_residual <= cone_tol) || outer >= max_outer;
        if done || !report.converged() && report.status != SolveStatus::IterLimit {
            report.iterations = iterations;
            report.wall_time_s = wall;
            report.trace = trace;
            report.objective = rebuilt.objective(&x);
            if let Some(path) = &solver.trace_path {
                if let Err(e) = report.write_trace_csv(path) {
                    log::warn!("could not write solver trace to {}: {e}", path.display());
                }
            }
            return Ok(Sequential {
                state,
                report,
                outer,
                cone_residual,
            });
        }
    }
}

/// Largest violation of the fixed-assignment constraints at a trajectory.
pub(crate) fn assignment_violation(
    problem: &PushProblem,
    assembly: AssemblyOptions,
    assignment: &Assignment,
    st: &TrajectoryState,
) -> Result<f64, ContactError> {
    let bundle = NlpBundle::new(problem, assembly, assignment.clone(), &st.poses)?;
    let x = bundle.pack(st);
    let mut eq = vec![0.0; bundle.num_eq()];
    let mut ineq = vec![0.0; bundle.num_ineq()];
    bundle.eq_constraints(&x, &mut eq);
    bundle.ineq_constraints(&x, &mut ineq);
    let e = eq.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(ineq.iter().fold(e, |m, v| m.max(*v)))
}

/// Region holding each of `P_1..P_N`, for objects with several regions.
pub(crate) fn nearest_regions(problem: &PushProblem, st: &TrajectoryState) -> Option<Vec<usize>> {
    (!problem.object.is_convex_object()).then(|| {
        st.poses[1..]
            .iter()
            .map(|p| problem.object.nearest_region([p[0], p[1]]))
            .collect()
    })
}

pub(crate) fn one_hot(st: &TrajectoryState, schedule: &[usize], direct: bool) -> TrajectoryState {
    let mut out = st.clone();
    for (row, &m) in out.probs.iter_mut().zip(schedule) {
        row.iter_mut().enumerate().for_each(|(k, p)| *p = if k == m { 1.0 } else { 0.0 });
    }
    if !direct {
        out.integrate();
    }
    out
}

/// Terminal and path cost of the executed trajectory plus the relaxation
/// terms of the probability schedule.
pub(crate) fn plan_objective(
    problem: &PushProblem,
    assembly: AssemblyOptions,
    fixed: &Assignment,
    st: &TrajectoryState,
    probs: &[Vec<f64>],
) -> Result<ObjectiveBreakdown, ContactError> {
    let bundle = NlpBundle::new(problem, assembly, fixed.clone(), &st.poses)?;
    let mut b = bundle.breakdown(&bundle.pack(st));
    let w = &problem.weights;
    b.entropy = if probs.first().map_or(0, |r| r.len()) > 1 {
        -w.lambda_e * entropy_cost(probs)
    } else {
        0.0
    };
    b.kl = if assembly.use_kl { w.lambda_kl * kl_cost(probs) } else { 0.0 };
    b.total = b.terminal + b.path + b.entropy + b.kl;
    Ok(b)
}

/// Initializer with every pusher's twist projected into its own cone and the
/// probability mass tilted towards one pusher per segment. Without `rng` the
/// waypoints are interpolated and the best-aligned pusher is preferred; with
/// it the intermediate waypoints are sampled inside the object and the
/// preferred pusher is random. Uniform rows are a stationary point of the
/// entropy term, so some tilt is needed to leave them.
pub fn informed_initial(problem: &PushProblem, rng: Option<&mut ChaCha8Rng>) -> TrajectoryState {
    initial_guess(problem, rng, &Assignment::default())
}

/// [`informed_initial`] honouring a fixed assignment: waypoints are pulled
/// into their regions and rows of fixed pushers are one-hot.
pub(crate) fn initial_guess(problem: &PushProblem, rng: Option<&mut ChaCha8Rng>, fixed: &Assignment) -> TrajectoryState {
    let mut st = TrajectoryState::initial(problem);
    let (m, segs) = (problem.num_pushers(), problem.segments);
    let mut rng = rng;
    if let Some(r) = rng.as_deref_mut() {
        for k in 1..segs {
            let p = sample_start(&problem.object, &problem.goal, WAYPOINT_MARGIN, false, r);
            st.poses[k][0] = p.x;
            st.poses[k][1] = p.y;
        }
    }
    if let Some(regions) = &fixed.regions {
        for (k, &l) in regions.iter().enumerate() {
            let p = &mut st.poses[k + 1];
            let q = problem.object.regions()[l].project([p[0], p[1]], WAYPOINT_MARGIN);
            p[0] = q[0];
            p[1] = q[1];
        }
    }
    let delta = st.delta();
    for n in 0..segs {
        let (a, b) = (st.poses[n], st.poses[n + 1]);
        let fd = PlanarTwist::new((b[0] - a[0]) / delta, (b[1] - a[1]) / delta, (b[2] - a[2]) / delta);
        let pose = PlanarPose::from(a);
        let mut best = (0, f64::INFINITY);
        for k in 0..m {
            let cone = motion_cone(&problem.pushers[k], &problem.support, &pose, &problem.object, problem.gravity, &problem.cone);
            let proj = cone.map(|c| c.project(&fd)).unwrap_or_else(|_| PlanarTwist::zero());
            let gap = (fd.to_vector() - proj.to_vector()).norm();
            if gap < best.1 {
                best = (k, gap);
            }
            st.twists[n][k] = proj.to_array();
        }
        if let Some(schedule) = &fixed.pushers {
            st.probs[n] = (0..m).map(|k| if k == schedule[n] { 1.0 } else { 0.0 }).collect();
        } else if m > 1 {
            let pick = match rng.as_deref_mut() {
                Some(r) => r.gen_range(0..m),
                None => best.0,
            };
            let rest = (1.0 - INIT_TILT) / (m - 1) as f64;
            st.probs[n] = (0..m).map(|k| if k == pick { INIT_TILT } else { rest }).collect();
        }
    }
    st
}

const WAYPOINT_MARGIN: f64 = 0.002;
const INIT_TILT: f64 = 0.7;

/// Entropy-relaxed planner: sequential solve, argmax rounding and, when the
/// rounded schedule violates a constraint, a repair solve with the pushers
/// (and regions, for non-convex objects) frozen. Restarts draw a random
/// preferred pusher per segment and stop at the first plan within the goal
/// tolerance.
pub fn plan_relaxed(problem: &PushProblem, opts: &RelaxedOptions) -> Result<PushPlan, PlanningError> {
    start_goal_check(problem)?;
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<PushPlan> = None;
    let mut last_err = None;
    let mut iterations = 0;
    for r in 0..=opts.restarts {
        let init = if r == 0 {
            informed_initial(problem, None)
        } else {
            informed_initial(problem, Some(&mut rng))
        };
        match attempt(problem, opts, init) {
            Ok(plan) => {
                iterations += plan.solve_report.iterations;
                let done = plan.converged() && plan.final_distance <= problem.epsilon;
                let rank = |p: &PushPlan| (!p.converged(), p.final_distance > problem.epsilon, p.objective.total);
                let better = best.as_ref().is_none_or(|b| rank(&plan) < rank(b));
                if better {
                    best = Some(plan);
                }
                if done && opts.first_converged {
                    break;
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut plan = match (best, last_err) {
        (Some(p), _) => p,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one attempt runs"),
    };
    plan.solve_report.iterations = iterations;
    plan.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(plan)
}

fn attempt(problem: &PushProblem, opts: &RelaxedOptions, init: TrajectoryState) -> Result<PushPlan, PlanningError> {
    let assembly = opts.assembly;
    let relaxed = solve_sequential(problem, assembly, &Assignment::default(), init, &opts.solver, opts.max_outer, opts.cone_tol)?;
    let schedule = round_schedule(&relaxed.state.probs);
    let rounded = one_hot(&relaxed.state, &schedule, assembly.direct_transcription);
    let fixed = Assignment {
        pushers: Some(schedule.clone()),
        regions: nearest_regions(problem, &rounded),
    };
    let violation = assignment_violation(problem, assembly, &fixed, &rounded)?;

    let mut outer = relaxed.outer;
    let (final_state, report, repaired) = if violation > opts.repair_tol {
        let rep = solve_sequential(problem, assembly, &fixed, rounded, &opts.solver, opts.max_outer, opts.cone_tol)?;
        outer += rep.outer;
        let mut report = rep.report;
        report.iterations += relaxed.report.iterations;
        report.wall_time_s += relaxed.report.wall_time_s;
        if report.converged() && rep.cone_residual > opts.cone_tol.max(1e-6) {
            report.status = SolveStatus::IterLimit;
        }
        (rep.state, report, true)
    } else {
        let mut report = relaxed.report;
        if report.converged() && relaxed.cone_residual > opts.cone_tol.max(1e-6) {
            report.status = SolveStatus::IterLimit;
        }
        (rounded, report, false)
    };

    let final_violation = assignment_violation(problem, assembly, &fixed, &final_state)?;
    if !report.converged() && final_violation > 1e-6 {
        return Err(PlanningError::failed(
            report.status,
            format!("rounded plan violates its constraints by {final_violation:.3e}"),
        ));
    }
    let mut objective = plan_objective(problem, assembly, &fixed, &final_state, &relaxed.state.probs)?;
    let (mut final_state, mut report) = (final_state, report);
    if opts.polish && problem.num_pushers() > 1 && report.converged() {
        let init = initial_guess(problem, None, &fixed);
        if let Ok(alt) = solve_sequential(problem, assembly, &fixed, init, &opts.solver, opts.max_outer, opts.cone_tol) {
            outer += alt.outer;
            report.wall_time_s += alt.report.wall_time_s;
            let feasible = alt.report.converged()
                && alt.cone_residual <= opts.cone_tol.max(1e-6)
                && assignment_violation(problem, assembly, &fixed, &alt.state)? <= 1e-6;
            let reach = |st: &TrajectoryState| problem.distance(&PlanarPose::from(*st.poses.last().expect("poses")));
            if feasible && reach(&alt.state) <= reach(&final_state).max(problem.epsilon) {
                let cand = plan_objective(problem, assembly, &fixed, &alt.state, &relaxed.state.probs)?;
                if cand.minlp() < objective.minlp() {
                    objective = cand;
                    final_state = alt.state;
                }
            }
        }
    }
    let mut st = final_state;
    st.probs = relaxed.state.probs.clone();
    let mut plan = plan_from_state(PlannerTag::Relaxed, problem, &st, schedule, objective, report);
    plan.outer_iterations = outer;
    plan.repaired = repaired;
    Ok(plan)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::PlanningError;
    use crate::planners::round_schedule;
    use crate::scenarios;

    #[test]
    fn start_at_goal_is_trivial() {
        let p = scenarios::problem("square", scenarios::goal_for("square"));
        let plan = plan_relaxed(&p, &RelaxedOptions::default()).unwrap();
        assert!(plan.final_distance < 1e-6);
        assert!(plan.objective.total.abs() < 1e-3, "{:?}", plan.objective);
        let step: f64 = plan.twists_selected.iter().flatten().map(|c| c.abs()).sum::<f64>() * plan.delta;
        assert!(step < 1e-5);
    }

    #[test]
    fn square_reaches_goal_with_concentrated_schedule() {
        let p = scenarios::problem("square", PlanarPose::new(-0.015, 0.01, 0.0));
        let plan = plan_relaxed(&p, &RelaxedOptions::default()).unwrap();
        assert!(plan.converged());
        assert!(plan.final_distance <= p.epsilon);
        assert!(plan.min_concentration() >= 0.99);
        assert_eq!(plan.pusher_schedule, round_schedule(&plan.prob_schedule));
        for row in &plan.prob_schedule {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn single_pusher_plans_without_probabilities() {
        let mut p = scenarios::problem("square", PlanarPose::new(0.0, 0.0, 0.0));
        p.pushers.truncate(1);
        let plan = plan_relaxed(&p, &RelaxedOptions::default()).unwrap();
        assert!(plan.prob_schedule.iter().all(|r| r == &vec![1.0]));
        assert!(plan.pusher_schedule.iter().all(|&m| m == 0));
        assert_eq!(plan.objective.entropy, 0.0);
    }

    #[test]
    fn goal_outside_object_fails() {
        let mut p = scenarios::problem("square", PlanarPose::new(0.0, 0.0, 0.0));
        p.goal = PlanarPose::new(0.1, 0.0, 0.0);
        match plan_relaxed(&p, &RelaxedOptions::default()) {
            Err(PlanningError::PlanningFailed { status, .. }) => assert_eq!(status, SolveStatus::Infeasible),
            other => panic!("unexpected {other:?}"),
        }
    }
}
