use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use super::{start_goal_check, PlannerTag, PushPlan, PLAN_SCHEMA};
use crate::contact::{motion_cone, MotionCone};
use crate::error::PlanningError;
use crate::nlp::{ObjectiveBreakdown, PushProblem};
use crate::rollout::distance;
use crate::se2::{wrap_angle, PlanarPose};
use crate::sqp::{SolveReport, SolveStatus};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtConfig {
    /// Translation-equivalent extension length in metres.
    pub step_size: f64,
    pub goal_bias: f64,
    /// Wall-clock budget in seconds.
    pub max_time: f64,
    /// Extension budget; makes runs reproducible regardless of machine speed.
    pub max_iters: usize,
    pub seed: u64,
    /// Twist samples drawn per extension; the one landing closest to the target is kept.
    pub candidates: usize,
    /// Half-width of the orientation sampling window around the goal.
    pub theta_range: f64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        RrtConfig {
            step_size: 0.005,
            goal_bias: 0.1,
            max_time: 10.0,
            max_iters: usize::MAX,
            seed: 0,
            candidates: 8,
            theta_range: 0.5,
        }
    }
}

/// Best goal distance seen so far, sampled whenever it improves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnytimePoint {
    pub elapsed_s: f64,
    pub iteration: usize,
    pub best_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RrtStats {
    pub iterations: usize,
    pub nodes: usize,
    pub reached: bool,
    pub best_distance: f64,
    pub wall_time_s: f64,
    pub anytime: Vec<AnytimePoint>,
}

impl RrtStats {
    /// Best distance reached within `budget` seconds.
    pub fn distance_at(&self, budget: f64) -> f64 {
        self.anytime
            .iter()
            .take_while(|p| p.elapsed_s <= budget)
            .last()
            .map_or(f64::INFINITY, |p| p.best_distance)
    }
}

#[derive(Debug, Clone)]
struct Node {
    pose: [f64; 3],
    parent: Option<usize>,
    pusher: usize,
    twist: [f64; 3],
    cones: Vec<Option<Option<MotionCone>>>,
}

/// Outcome of a search: the path to the closest node and the run statistics.
#[derive(Debug, Clone)]
pub struct RrtOutcome {
    pub plan: PushPlan,
    pub stats: RrtStats,
}

/// Runs RRT-MC and returns the best path found, reached or not.
pub fn search_rrt_mc(problem: &PushProblem, cfg: &RrtConfig) -> Result<RrtOutcome, PlanningError> {
    start_goal_check(problem)?;
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = problem.weights;
    let goal = problem.goal;
    let d = |p: &[f64; 3], q: &[f64; 3]| distance(&PlanarPose::from(*p), &PlanarPose::from(*q), w.lambda_s, w.lambda_theta);
    let goal_arr = goal.to_array();
    let m = problem.num_pushers();
    let (lo, hi) = problem.object.bounding_box();

    let root = problem.start.to_array();
    let mut nodes = vec![Node {
        pose: root,
        parent: None,
        pusher: 0,
        twist: [0.0; 3],
        cones: vec![None; m],
    }];
    let mut best = (0, d(&root, &goal_arr));
    let mut anytime = vec![AnytimePoint {
        elapsed_s: 0.0,
        iteration: 0,
        best_distance: best.1,
    }];
    let step = w.lambda_s * cfg.step_size;
    let mut iterations = 0;
    while best.1 > problem.epsilon && iterations < cfg.max_iters && clock.elapsed().as_secs_f64() < cfg.max_time {
        iterations += 1;
        let target = if rng.gen::<f64>() < cfg.goal_bias {
            goal_arr
        } else {
            [
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                goal.theta + rng.gen_range(-cfg.theta_range..cfg.theta_range),
            ]
        };
        let near = (0..nodes.len())
            .min_by(|&a, &b| d(&nodes[a].pose, &target).total_cmp(&d(&nodes[b].pose, &target)))
            .expect("tree is non-empty");
        let reach = d(&nodes[near].pose, &target).min(step);
        if reach <= 0.0 {
            continue;
        }
        let mut chosen: Option<([f64; 3], usize, [f64; 3], f64)> = None;
        for _ in 0..cfg.candidates.max(1) {
            let pusher = rng.gen_range(0..m);
            let cone = cone_at(problem, &mut nodes[near], pusher);
            let Some(cone) = cone else { continue };
            let dir = sample_direction(&cone, &mut rng);
            let len = w.lambda_s * (dir[0] * dir[0] + dir[1] * dir[1]).sqrt() + w.lambda_theta * dir[2].abs();
            if len <= 0.0 {
                continue;
            }
            let twist = dir.map(|c| c * reach / len);
            let p = nodes[near].pose;
            let child = [p[0] + twist[0], p[1] + twist[1], p[2] + twist[2]];
            if problem.object.region_residual([child[0], child[1]]) > 0.0 {
                continue;
            }
            let score = d(&child, &target);
            if chosen.as_ref().is_none_or(|c| score < c.3) {
                chosen = Some((child, pusher, twist, score));
            }
        }
        let Some((child, pusher, twist, _)) = chosen else { continue };
        nodes.push(Node {
            pose: child,
            parent: Some(near),
            pusher,
            twist,
            cones: vec![None; m],
        });
        let dist = d(&child, &goal_arr);
        if dist < best.1 {
            best = (nodes.len() - 1, dist);
            anytime.push(AnytimePoint {
                elapsed_s: clock.elapsed().as_secs_f64(),
                iteration: iterations,
                best_distance: dist,
            });
        }
    }
    let wall = clock.elapsed().as_secs_f64();
    let reached = best.1 <= problem.epsilon;
    let stats = RrtStats {
        iterations,
        nodes: nodes.len(),
        reached,
        best_distance: best.1,
        wall_time_s: wall,
        anytime,
    };
    let plan = extract(problem, &nodes, best.0, reached, iterations, wall);
    Ok(RrtOutcome { plan, stats })
}

/// RRT-MC baseline; fails when the goal tolerance is not met within budget.
pub fn plan_rrt_mc(problem: &PushProblem, cfg: &RrtConfig) -> Result<(PushPlan, RrtStats), PlanningError> {
    let out = search_rrt_mc(problem, cfg)?;
    if !out.stats.reached {
        return Err(PlanningError::failed(
            SolveStatus::IterLimit,
            format!(
                "goal not reached after {} extensions ({:.3} s), best distance {:.3e}",
                out.stats.iterations, out.stats.wall_time_s, out.stats.best_distance
            ),
        ));
    }
    Ok((out.plan, out.stats))
}

fn cone_at(problem: &PushProblem, node: &mut Node, pusher: usize) -> Option<MotionCone> {
    if node.cones[pusher].is_none() {
        let cone = motion_cone(
            &problem.pushers[pusher],
            &problem.support,
            &PlanarPose::from(node.pose),
            &problem.object,
            problem.gravity,
            &problem.cone,
        )
        .ok();
        node.cones[pusher] = Some(cone);
    }
    node.cones[pusher].clone().flatten()
}

/// Dirichlet(1) combination of the cone generators.
fn sample_direction<R: Rng>(cone: &MotionCone, rng: &mut R) -> [f64; 3] {
    let g = cone.generators();
    if g.len() == 1 {
        return g[0].to_array();
    }
    let weights = Dirichlet::new_with_size(1.0, g.len())
        .expect("at least two generators")
        .sample(rng);
    let mut v = [0.0; 3];
    for (gen, wgt) in g.iter().zip(weights) {
        let a = gen.to_array();
        for c in 0..3 {
            v[c] += wgt * a[c];
        }
    }
    v
}

fn extract(problem: &PushProblem, nodes: &[Node], leaf: usize, reached: bool, iterations: usize, wall: f64) -> PushPlan {
    let mut path = vec![leaf];
    while let Some(p) = nodes[*path.last().unwrap()].parent {
        path.push(p);
    }
    path.reverse();
    let m = problem.num_pushers();
    let segs = &path[1..];
    let poses: Vec<PlanarPose> = path.iter().map(|&i| PlanarPose::from(nodes[i].pose)).collect();
    let pusher_schedule: Vec<usize> = segs.iter().map(|&i| nodes[i].pusher).collect();
    let twists_selected: Vec<[f64; 3]> = segs.iter().map(|&i| nodes[i].twist).collect();
    let twists = segs
        .iter()
        .map(|&i| {
            let mut row = vec![[0.0; 3]; m];
            row[nodes[i].pusher] = nodes[i].twist;
            row
        })
        .collect();
    let prob_schedule = pusher_schedule
        .iter()
        .map(|&k| (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
        .collect();
    let w = problem.weights;
    let last = poses.last().unwrap();
    let terminal = problem.distance(last);
    let path_cost: f64 = poses
        .windows(2)
        .map(|p| {
            w.lambda_p
                * (w.lambda_s * ((p[1].x - p[0].x).powi(2) + (p[1].y - p[0].y).powi(2)).sqrt()
                    + w.lambda_theta * wrap_angle(p[1].theta - p[0].theta).abs())
        })
        .sum();
    let objective = ObjectiveBreakdown {
        terminal,
        path: path_cost,
        entropy: 0.0,
        kl: 0.0,
        total: terminal + path_cost,
    };
    let segments = segs.len();
    PushPlan {
        schema: PLAN_SCHEMA.to_string(),
        planner_tag: PlannerTag::RrtMc,
        poses,
        twists_selected,
        twists,
        prob_schedule,
        pusher_schedule,
        delta: 1.0,
        horizon: segments as f64,
        objective,
        final_distance: terminal,
        outer_iterations: 0,
        repaired: false,
        wall_time_s: wall,
        solve_report: SolveReport {
            x_opt: Vec::new(),
            objective: objective.total,
            max_constraint_violation: 0.0,
            kkt_residual: 0.0,
            iterations,
            wall_time_s: wall,
            status: if reached {
                SolveStatus::Converged
            } else {
                SolveStatus::IterLimit
            },
            eq_multipliers: Vec::new(),
            ineq_multipliers: Vec::new(),
            trace: Vec::new(),
            hessian: Vec::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn start_at_goal_returns_root() {
        let p = scenarios::problem("square", scenarios::goal_for("square"));
        let (plan, stats) = plan_rrt_mc(&p, &RrtConfig::default()).unwrap();
        assert_eq!(plan.num_segments(), 0);
        assert_eq!(stats.iterations, 0);
        assert!(plan.final_distance == 0.0);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let p = scenarios::problem("square", PlanarPose::new(-0.01, 0.01, 0.0));
        let cfg = RrtConfig {
            max_iters: 150,
            max_time: 60.0,
            seed: 9,
            ..RrtConfig::default()
        };
        let a = search_rrt_mc(&p, &cfg).unwrap();
        let b = search_rrt_mc(&p, &cfg).unwrap();
        assert_eq!(a.stats.nodes, b.stats.nodes);
        assert_eq!(a.plan.pusher_schedule, b.plan.pusher_schedule);
        assert_eq!(
            a.plan.poses.iter().map(|q| q.to_array()).collect::<Vec<_>>(),
            b.plan.poses.iter().map(|q| q.to_array()).collect::<Vec<_>>()
        );
        assert!(a.stats.best_distance < p.distance(&p.start));
    }

    #[test]
    fn extensions_stay_in_cones() {
        let p = scenarios::problem("square", PlanarPose::new(-0.01, 0.01, 0.0));
        let cfg = RrtConfig {
            max_iters: 60,
            max_time: 60.0,
            seed: 2,
            ..RrtConfig::default()
        };
        let out = search_rrt_mc(&p, &cfg).unwrap();
        for (n, xi) in out.plan.twists_selected.iter().enumerate() {
            let m = out.plan.pusher_schedule[n];
            let cone = motion_cone(&p.pushers[m], &p.support, &out.plan.poses[n], &p.object, p.gravity, &p.cone).unwrap();
            assert!(cone.max_residual(&(*xi).into()) <= 1e-9);
        }
    }
}
