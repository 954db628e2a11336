use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::relaxed::{assignment_violation, initial_guess, nearest_regions, plan_objective, solve_sequential};
use super::{plan_from_state, start_goal_check, PlannerTag, PushPlan};
use crate::error::PlanningError;
use crate::nlp::{AssemblyOptions, Assignment, PushProblem, TrajectoryState};
use crate::sqp::{SolveStatus, SolverOptions};

/// Largest number of pusher sequences the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 10_000;
/// Largest region count whose indicators are enumerated.
pub const MAX_REGIONS: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub assembly: AssemblyOptions,
    pub solver: SolverOptions,
    pub max_outer: usize,
    pub cone_tol: f64,
    /// Constraint violation accepted for a candidate to count as feasible.
    pub feas_tol: f64,
    /// Initial guesses per assignment: interpolated waypoints, then random ones.
    pub starts: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            assembly: AssemblyOptions::default(),
            solver: SolverOptions::default(),
            max_outer: 12,
            cone_tol: 1e-9,
            feas_tol: 1e-6,
            starts: 2,
            seed: 0,
        }
    }
}

/// Number of pusher sequences for `n` segments and `m` pushers.
pub fn assignment_count(m: usize, n: usize) -> u128 {
    (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

/// Mixed-radix enumeration of `base^len` index sequences.
fn sequences(base: usize, len: usize) -> Vec<Vec<usize>> {
    let total = base.pow(len as u32);
    (0..total)
        .map(|mut k| {
            let mut s = vec![0; len];
            for v in s.iter_mut().rev() {
                *v = k % base;
                k /= base;
            }
            s
        })
        .collect()
}

struct Candidate {
    plan: PushPlan,
    cost: f64,
}

/// Exact enumeration of every pusher sequence (and region sequence for
/// non-convex objects); the cheapest feasible fixed-schedule solve wins.
pub fn plan_oracle(problem: &PushProblem, opts: &OracleOptions) -> Result<PushPlan, PlanningError> {
    plan_oracle_seeded(problem, opts, &[])
}

/// [`plan_oracle`] with known feasible plans as extra starting points. Each
/// fixed-assignment subproblem is non-convex, so a local solve can miss the
/// optimum of its assignment; seeding with incumbents guarantees the result
/// is no worse than any of them.
pub fn plan_oracle_seeded(problem: &PushProblem, opts: &OracleOptions, incumbents: &[&PushPlan]) -> Result<PushPlan, PlanningError> {
    start_goal_check(problem)?;
    let clock = Instant::now();
    let (m, n) = (problem.num_pushers(), problem.segments);
    let count = assignment_count(m, n);
    if count > ORACLE_LIMIT {
        return Err(PlanningError::OracleTooLarge(count));
    }
    let regions = problem.object.regions().len();
    let region_seqs: Vec<Option<Vec<usize>>> = if problem.object.is_convex_object() {
        vec![None]
    } else {
        if regions > MAX_REGIONS {
            return Err(PlanningError::failed(
                SolveStatus::Infeasible,
                format!("{regions} regions exceed the enumeration cap of {MAX_REGIONS}"),
            ));
        }
        sequences(regions, n).into_iter().map(Some).collect()
    };
    let jobs: Vec<Assignment> = sequences(m, n)
        .into_iter()
        .flat_map(|p| {
            region_seqs.iter().map(move |r| Assignment {
                pushers: Some(p.clone()),
                regions: r.clone(),
            })
        })
        .collect();
    log::debug!("oracle: {} fixed-assignment solves", jobs.len());

    let solver = SolverOptions {
        trace_path: None,
        ..opts.solver.clone()
    };
    let mut candidates: Vec<Candidate> = jobs
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, a)| solve_assignment(problem, opts, &solver, i as u64, a))
        .collect();
    candidates.extend(incumbents.iter().filter_map(|p| seeded_candidate(problem, opts, &solver, p)));
    // Ties resolve to the lexicographically first assignment.
    let best = candidates
        .into_iter()
        .reduce(|a, b| if b.cost < a.cost { b } else { a })
        .ok_or_else(|| PlanningError::failed(SolveStatus::Infeasible, "no pusher assignment is feasible"))?;
    let mut plan = best.plan;
    plan.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(plan)
}

fn solve_assignment(problem: &PushProblem, opts: &OracleOptions, solver: &SolverOptions, index: u64, a: Assignment) -> Option<Candidate> {
    let schedule = a.pushers.clone().expect("oracle fixes pushers");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let mut best: Option<Candidate> = None;
    for s in 0..opts.starts.max(1) {
        let init = initial_guess(problem, (s > 0).then_some(&mut rng), &a);
        let Ok(res) = solve_sequential(problem, opts.assembly, &a, init, solver, opts.max_outer, opts.cone_tol) else {
            continue;
        };
        let Ok(violation) = assignment_violation(problem, opts.assembly, &a, &res.state) else {
            continue;
        };
        if violation > opts.feas_tol || res.cone_residual > opts.feas_tol {
            continue;
        }
        let probs = res.state.probs.clone();
        let Ok(objective) = plan_objective(problem, opts.assembly, &a, &res.state, &probs) else {
            continue;
        };
        let cost = objective.minlp();
        if best.as_ref().is_some_and(|b| b.cost <= cost) {
            continue;
        }
        let mut plan = plan_from_state(PlannerTag::Oracle, problem, &res.state, schedule.clone(), objective, res.report);
        plan.outer_iterations = res.outer;
        best = Some(Candidate { plan, cost });
    }
    best
}

fn seeded_candidate(problem: &PushProblem, opts: &OracleOptions, solver: &SolverOptions, incumbent: &PushPlan) -> Option<Candidate> {
    let schedule = incumbent.pusher_schedule.clone();
    if schedule.len() != problem.segments {
        return None;
    }
    let m = problem.num_pushers();
    let state = TrajectoryState {
        poses: incumbent.poses.iter().map(|p| p.to_array()).collect(),
        twists: incumbent.twists.clone(),
        probs: schedule.iter().map(|&k| (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect(),
        horizon: incumbent.horizon,
    };
    let a = Assignment {
        pushers: Some(schedule.clone()),
        regions: nearest_regions(problem, &state),
    };
    let evaluate = |st: &TrajectoryState, report: crate::sqp::SolveReport, outer: usize| -> Option<Candidate> {
        let violation = assignment_violation(problem, opts.assembly, &a, st).ok()?;
        if violation > opts.feas_tol {
            return None;
        }
        let objective = plan_objective(problem, opts.assembly, &a, st, &st.probs).ok()?;
        let mut plan = plan_from_state(PlannerTag::Oracle, problem, st, schedule.clone(), objective, report);
        plan.outer_iterations = outer;
        Some(Candidate { cost: objective.minlp(), plan })
    };
    let warm = solve_sequential(problem, opts.assembly, &a, state.clone(), solver, opts.max_outer, opts.cone_tol)
        .ok()
        .filter(|r| r.cone_residual <= opts.feas_tol)
        .and_then(|r| evaluate(&r.state, r.report, r.outer));
    let as_is = evaluate(&state, incumbent.solve_report.clone(), 0);
    match (warm, as_is) {
        (Some(w), Some(i)) => Some(if w.cost <= i.cost { w } else { i }),
        (w, i) => w.or(i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;
    use crate::se2::PlanarPose;

    #[test]
    fn enumeration_order() {
        let s = sequences(3, 2);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], vec![0, 0]);
        assert_eq!(s[5], vec![1, 2]);
        assert_eq!(sequences(1, 4), vec![vec![0; 4]]);
    }

    #[test]
    fn single_pusher_is_one_solve() {
        let mut p = scenarios::problem("square", PlanarPose::new(-0.01, 0.0, 0.0));
        p.pushers.truncate(1);
        let plan = plan_oracle(&p, &OracleOptions::default()).unwrap();
        assert_eq!(plan.pusher_schedule, vec![0; p.segments]);
        assert_eq!(plan.planner_tag, PlannerTag::Oracle);
    }

    #[test]
    fn unreachable_goal_fails() {
        let mut p = scenarios::problem("square", PlanarPose::new(0.0, 0.0, 0.0));
        p.goal = PlanarPose::new(0.0, 0.2, 0.0);
        assert!(matches!(plan_oracle(&p, &OracleOptions::default()), Err(PlanningError::PlanningFailed { .. })));
    }

    #[test]
    fn oversized_enumeration_is_refused() {
        let mut p = scenarios::problem("square", PlanarPose::new(0.0, 0.0, 0.0));
        p.segments = 7;
        assert!(matches!(plan_oracle(&p, &OracleOptions::default()), Err(PlanningError::OracleTooLarge(16384))));
    }

    #[test]
    fn count_guard() {
        assert_eq!(assignment_count(4, 3), 64);
        assert!(assignment_count(10, 5) > ORACLE_LIMIT);
    }
}
