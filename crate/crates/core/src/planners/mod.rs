//! Planning strategies and the plan record they share.

mod oracle;
mod relaxed;
mod rrt;

use serde::{Deserialize, Serialize};

use crate::error::PlanningError;
use crate::nlp::{ObjectiveBreakdown, PushProblem, TrajectoryState};
use crate::se2::PlanarPose;
use crate::sqp::{SolveReport, SolveStatus};

pub use oracle::{assignment_count, plan_oracle, plan_oracle_seeded, OracleOptions, MAX_REGIONS, ORACLE_LIMIT};
pub use relaxed::{informed_initial, plan_relaxed, RelaxedOptions};
pub use rrt::{plan_rrt_mc, search_rrt_mc, AnytimePoint, RrtConfig, RrtOutcome, RrtStats};

pub const PLAN_SCHEMA: &str = "plan_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlannerTag {
    Relaxed,
    Oracle,
    RrtMc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushPlan {
    pub schema: String,
    pub planner_tag: PlannerTag,
    /// `P_0..P_N` as planned.
    pub poses: Vec<PlanarPose>,
    /// Twist of the scheduled pusher per segment.
    pub twists_selected: Vec<[f64; 3]>,
    /// Every pusher's twist per segment.
    pub twists: Vec<Vec<[f64; 3]>>,
    pub prob_schedule: Vec<Vec<f64>>,
    pub pusher_schedule: Vec<usize>,
    pub delta: f64,
    pub horizon: f64,
    pub objective: ObjectiveBreakdown,
    pub final_distance: f64,
    /// Sequential cone rebuilds used by the optimization planners.
    pub outer_iterations: usize,
    /// Whether the rounded schedule needed a fixed-pusher repair solve.
    pub repaired: bool,
    pub wall_time_s: f64,
    pub solve_report: SolveReport,
}

impl PushPlan {
    pub fn num_segments(&self) -> usize {
        self.pusher_schedule.len()
    }

    pub fn status(&self) -> SolveStatus {
        self.solve_report.status
    }

    pub fn converged(&self) -> bool {
        self.solve_report.converged()
    }

    pub fn final_pose(&self) -> PlanarPose {
        *self.poses.last().expect("plan has poses")
    }

    /// Smallest of the row maxima of the probability schedule.
    pub fn min_concentration(&self) -> f64 {
        self.prob_schedule
            .iter()
            .map(|r| r.iter().cloned().fold(0.0, f64::max))
            .fold(1.0, f64::min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Argmax per row, ties to the lowest index.
pub fn round_schedule(probs: &[Vec<f64>]) -> Vec<usize> {
    probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for (m, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = m;
                }
            }
            best
        })
        .collect()
}

/// Number of segment boundaries where the scheduled pusher changes.
pub fn count_switches(plan: &PushPlan) -> usize {
    switches(&plan.pusher_schedule)
}

pub fn switches(schedule: &[usize]) -> usize {
    schedule.windows(2).filter(|w| w[0] != w[1]).count()
}

pub(crate) fn start_goal_check(problem: &PushProblem) -> Result<(), PlanningError> {
    problem.validate()?;
    for (name, p) in [("start", problem.start), ("goal", problem.goal)] {
        if problem.object.region_residual([p.x, p.y]) > 1e-12 {
            return Err(PlanningError::failed(
                SolveStatus::Infeasible,
                format!("{name} pose ({:.4}, {:.4}) lies outside the object", p.x, p.y),
            ));
        }
    }
    Ok(())
}

pub(crate) fn plan_from_state(
    tag: PlannerTag,
    problem: &PushProblem,
    st: &TrajectoryState,
    schedule: Vec<usize>,
    objective: ObjectiveBreakdown,
    report: SolveReport,
) -> PushPlan {
    let poses: Vec<PlanarPose> = st.poses.iter().map(|&p| PlanarPose::from(p)).collect();
    let final_distance = problem.distance(poses.last().unwrap());
    PushPlan {
        schema: PLAN_SCHEMA.to_string(),
        planner_tag: tag,
        twists_selected: schedule.iter().enumerate().map(|(n, &m)| st.twists[n][m]).collect(),
        twists: st.twists.clone(),
        prob_schedule: st.probs.clone(),
        pusher_schedule: schedule,
        delta: st.delta(),
        horizon: st.horizon,
        objective,
        final_distance,
        outer_iterations: 0,
        repaired: false,
        wall_time_s: report.wall_time_s,
        solve_report: report,
        poses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_ties_go_low() {
        assert_eq!(round_schedule(&[vec![0.5, 0.5], vec![0.2, 0.3, 0.3]]), vec![0, 1]);
    }

    #[test]
    fn switch_counts() {
        assert_eq!(switches(&[2, 2, 2]), 0);
        assert_eq!(switches(&[0, 1, 0]), 2);
        assert_eq!(switches(&[]), 0);
    }
}
