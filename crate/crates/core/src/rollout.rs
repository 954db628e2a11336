//! Kinematic replay of plans and the scalar metrics reported by experiments.

use serde::{Deserialize, Serialize};

use crate::contact::motion_cone;
use crate::nlp::PushProblem;
use crate::planners::PushPlan;
use crate::se2::{wrap_angle, PlanarPose, PlanarTwist};

/// `λ_s ‖κ_p − κ_g‖ + λ_θ |wrap(θ_p − θ_g)|`.
pub fn distance(p: &PlanarPose, g: &PlanarPose, lambda_s: f64, lambda_theta: f64) -> f64 {
    lambda_s * (p.x - g.x).hypot(p.y - g.y) + lambda_theta * wrap_angle(p.theta - g.theta).abs()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutResult {
    /// `P_0..P_N` from Euler integration of the scheduled twists.
    pub pose_trace: Vec<PlanarPose>,
    pub final_distance: f64,
    /// Largest cone residual of the executed twist per segment; non-positive
    /// inside. Infinite where no cone could be built.
    pub mc_violations: Vec<f64>,
    /// Region residual of `P_1..P_N`; non-positive inside the object.
    pub state_violations: Vec<f64>,
}

impl RolloutResult {
    pub fn max_mc_violation(&self) -> f64 {
        self.mc_violations.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_state_violation(&self) -> f64 {
        self.state_violations.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Replays the selected twists from the problem's start, rebuilding each
/// active pusher's cone at the pose actually reached.
pub fn rollout(plan: &PushPlan, problem: &PushProblem) -> RolloutResult {
    let mut pose = problem.start;
    let mut trace = vec![pose];
    let mut mc = Vec::with_capacity(plan.num_segments());
    let mut state = Vec::with_capacity(plan.num_segments());
    for (xi, &m) in plan.twists_selected.iter().zip(&plan.pusher_schedule) {
        let twist = PlanarTwist::from(*xi);
        let residual = motion_cone(
            &problem.pushers[m],
            &problem.support,
            &pose,
            &problem.object,
            problem.gravity,
            &problem.cone,
        )
        .map_or(f64::INFINITY, |c| c.max_residual(&twist));
        mc.push(residual);
        pose = PlanarPose::new(
            pose.x + plan.delta * xi[0],
            pose.y + plan.delta * xi[1],
            pose.theta + plan.delta * xi[2],
        );
        state.push(problem.object.region_residual([pose.x, pose.y]));
        trace.push(pose);
    }
    RolloutResult {
        final_distance: problem.distance(&pose),
        pose_trace: trace,
        mc_violations: mc,
        state_violations: state,
    }
}

/// Switch reduction `100 (Δ − Δ_kl) / Δ` in percent; `None` when `Δ = 0`.
pub fn q_metric(switches_plain: usize, switches_kl: usize) -> Option<f64> {
    (switches_plain > 0).then(|| 100.0 * (switches_plain as f64 - switches_kl as f64) / switches_plain as f64)
}
