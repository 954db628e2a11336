//! Transcription of the pushing problem into a smooth NLP.
//!
//! Decision vector, in order: poses `P_1..P_N` (direct transcription only),
//! twists `xi_n^m` for every active pusher of every segment, probabilities
//! `p_n^m` (relaxed schedules with more than one pusher), then `(T, delta)`
//! when the horizon is free. Motion cones are held fixed inside a bundle;
//! planners rebuild bundles as the poses move.

use serde::{Deserialize, Serialize};

use crate::contact::{motion_cone, ConeConfig, MotionCone, PusherContact, SupportModel};
use crate::error::{ConfigError, ContactError};
use crate::se2::{finite_difference_twist, wrap_angle, ConvexRegion, PlanarPose, PolygonObject};
use crate::sqp::NlpProblem;

/// Smoothing inside `p log p` and the KL ratio.
pub const LOG_EPS: f64 = 1e-12;
/// Smoothing of the Euclidean norms in the distance terms.
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub lambda_kl: f64,
    pub lambda_s: f64,
    pub lambda_theta: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            lambda_p: 0.1,
            lambda_e: 0.1,
            lambda_kl: 0.1,
            lambda_s: 0.9,
            lambda_theta: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PushProblem {
    pub object: PolygonObject,
    pub pushers: Vec<PusherContact>,
    pub support: SupportModel,
    pub gravity: [f64; 2],
    pub start: PlanarPose,
    pub goal: PlanarPose,
    /// Segment count `N`.
    pub segments: usize,
    /// Horizon `T` in seconds; the initial guess when time is free.
    pub horizon: f64,
    pub weights: Weights,
    pub epsilon: f64,
    pub cone: ConeConfig,
    /// Box bound on every twist component.
    pub twist_bound: f64,
    /// Admissible horizon range when time is free.
    pub horizon_bounds: [f64; 2],
}

impl PushProblem {
    pub fn new(
        object: PolygonObject,
        pushers: Vec<PusherContact>,
        support: SupportModel,
        start: PlanarPose,
        goal: PlanarPose,
    ) -> Self {
        PushProblem {
            object,
            pushers,
            support,
            gravity: crate::contact::DEFAULT_GRAVITY,
            start,
            goal,
            segments: 3,
            horizon: 2.0,
            weights: Weights::default(),
            epsilon: 1e-4,
            cone: ConeConfig::default(),
            twist_bound: 1.0,
            horizon_bounds: [0.5, 8.0],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.segments < 2 {
            return Err(ConfigError::field("N", "need at least 2 segments"));
        }
        if self.pushers.is_empty() {
            return Err(ConfigError::field("pushers", "need at least one pusher"));
        }
        let w = &self.weights;
        for (name, v) in [
            ("weights.lambda_p", w.lambda_p),
            ("weights.lambda_e", w.lambda_e),
            ("weights.lambda_kl", w.lambda_kl),
            ("weights.lambda_s", w.lambda_s),
            ("weights.lambda_theta", w.lambda_theta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ConfigError::field(name, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(ConfigError::field("epsilon", "must be positive"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ConfigError::field("T", "must be positive"));
        }
        let [lo, hi] = self.horizon_bounds;
        if !(lo > 0.0 && lo <= self.horizon && self.horizon <= hi) {
            return Err(ConfigError::field("T", "horizon outside its admissible range"));
        }
        if !(self.twist_bound > 0.0) {
            return Err(ConfigError::field("twist_bound", "must be positive"));
        }
        Ok(())
    }

    pub fn num_pushers(&self) -> usize {
        self.pushers.len()
    }

    pub fn distance(&self, p: &PlanarPose) -> f64 {
        crate::rollout::distance(p, &self.goal, self.weights.lambda_s, self.weights.lambda_theta)
    }

    /// Same instance with every pusher's friction coefficient replaced.
    pub fn with_pusher_friction(&self, mu_p: f64) -> Result<PushProblem, ContactError> {
        let pushers = self
            .pushers
            .iter()
            .map(|p| p.with_friction(mu_p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PushProblem {
            pushers,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub direct_transcription: bool,
    pub free_time: bool,
    pub use_kl: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            direct_transcription: true,
            free_time: true,
            use_kl: false,
        }
    }
}

/// Discrete choices frozen in a bundle: the pusher per segment and, for
/// non-convex objects, the region holding each pose `P_1..P_N`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub pushers: Option<Vec<usize>>,
    pub regions: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub terminal: f64,
    pub path: f64,
    pub entropy: f64,
    pub kl: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    /// Objective of the mixed-integer program (no relaxation terms).
    pub fn minlp(&self) -> f64 {
        self.terminal + self.path
    }
}

/// Trajectory values independent of the decision layout. Twists and
/// probabilities are indexed `[segment][pusher]` over all pushers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    /// `P_0..P_N`, with unwrapped angles.
    pub poses: Vec<[f64; 3]>,
    pub twists: Vec<Vec<[f64; 3]>>,
    pub probs: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl TrajectoryState {
    pub fn delta(&self) -> f64 {
        self.horizon / (self.poses.len() - 2) as f64
    }

    /// Linear pose interpolation, finite-difference twists, uniform probabilities.
    pub fn initial(problem: &PushProblem) -> TrajectoryState {
        let n = problem.segments;
        let m = problem.num_pushers();
        let s = problem.start;
        let dtheta = wrap_angle(problem.goal.theta - s.theta);
        let poses: Vec<[f64; 3]> = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                [
                    s.x + t * (problem.goal.x - s.x),
                    s.y + t * (problem.goal.y - s.y),
                    s.theta + t * dtheta,
                ]
            })
            .collect();
        let delta = problem.horizon / (n - 1) as f64;
        let twists = (0..n)
            .map(|k| {
                let a = PlanarPose::from(poses[k]);
                let b = PlanarPose::from(poses[k + 1]);
                let xi = finite_difference_twist(&a, &b, delta)
                    .map(|t| t.to_array())
                    .unwrap_or([0.0; 3]);
                vec![xi; m]
            })
            .collect();
        TrajectoryState {
            poses,
            twists,
            probs: vec![vec![1.0 / m as f64; m]; n],
            horizon: problem.horizon,
        }
    }

    /// Poses re-integrated from the schedule, keeping `P_0`.
    pub fn integrate(&mut self) {
        let delta = self.delta();
        for k in 0..self.twists.len() {
            let u = mix(&self.twists[k], &self.probs[k]);
            let prev = self.poses[k];
            for (c, uc) in u.iter().enumerate() {
                self.poses[k + 1][c] = prev[c] + delta * uc;
            }
        }
    }
}

fn mix(twists: &[[f64; 3]], probs: &[f64]) -> [f64; 3] {
    let mut u = [0.0; 3];
    for (t, p) in twists.iter().zip(probs) {
        for c in 0..3 {
            u[c] += p * t[c];
        }
    }
    u
}

/// `Σ p log(p + η)` over all rows; zero on one-hot rows, negative otherwise.
pub fn entropy_cost(probs: &[Vec<f64>]) -> f64 {
    probs
        .iter()
        .flatten()
        .map(|&p| p * (p + LOG_EPS).ln())
        .sum()
}

/// `Σ_n D_KL(p_{n+1} || p_n)` with smoothed logarithms.
pub fn kl_cost(probs: &[Vec<f64>]) -> f64 {
    probs
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(&q, &r)| q * ((q + LOG_EPS) / (r + LOG_EPS)).ln())
                .sum::<f64>()
        })
        .sum()
}

/// Euler defects `P_{n+1} - P_n - delta Σ_m p_n^m xi_n^m`, three per segment.
pub fn dynamics_defect(poses: &[[f64; 3]], twists: &[Vec<[f64; 3]>], probs: &[Vec<f64>], delta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * twists.len());
    for k in 0..twists.len() {
        let u = mix(&twists[k], &probs[k]);
        for c in 0..3 {
            out.push(poses[k + 1][c] - poses[k][c] - delta * u[c]);
        }
    }
    out
}

pub fn state_constraint_convex(pose: &PlanarPose, region: &ConvexRegion) -> Vec<f64> {
    region.residual([pose.x, pose.y])
}

pub fn sigmoid_blend(x: f64, breakpoint: f64, alpha: f64) -> f64 {
    let z = alpha * (x - breakpoint);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Region weights `w_l = Π_{j<l} σ_j · Π_{j>=l} (1 - σ_j)` and their `x`-derivatives.
fn blend_weights_with_slope(x: f64, breaks: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = breaks.iter().map(|&b| sigmoid_blend(x, b, alpha)).collect();
    let ds: Vec<f64> = s.iter().map(|v| alpha * v * (1.0 - v)).collect();
    let l = breaks.len() + 1;
    let mut w = vec![0.0; l];
    let mut dw = vec![0.0; l];
    for r in 0..l {
        let factor = |j: usize| if j < r { s[j] } else { 1.0 - s[j] };
        let dfactor = |j: usize| if j < r { ds[j] } else { -ds[j] };
        w[r] = (0..breaks.len()).map(factor).product();
        dw[r] = (0..breaks.len())
            .map(|k| {
                (0..breaks.len())
                    .map(|j| if j == k { dfactor(j) } else { factor(j) })
                    .product::<f64>()
            })
            .sum();
    }
    (w, dw)
}

pub fn blend_weights(x: f64, object: &PolygonObject) -> Vec<f64> {
    blend_weights_with_slope(x, object.blend_breaks(), object.alpha()).0
}

fn check_blendable(object: &PolygonObject) -> Result<(), ConfigError> {
    let regions = object.regions();
    if regions.len() < 2 {
        return Err(ConfigError::field("regions", "smoothed state constraint needs at least two regions"));
    }
    if object.blend_breaks().len() + 1 != regions.len() {
        return Err(ConfigError::field("blend_breaks", "need one breakpoint between consecutive regions"));
    }
    if regions.iter().any(|r| r.num_rows() != regions[0].num_rows()) {
        return Err(ConfigError::field("regions", "regions must have equal row counts to be blended"));
    }
    Ok(())
}

/// Sigmoid-blended region residuals, evaluated row by row.
pub fn state_constraint_nonconvex(pose: &PlanarPose, object: &PolygonObject) -> Result<Vec<f64>, ConfigError> {
    check_blendable(object)?;
    Ok(blended_rows(pose.x, pose.y, object).0)
}

/// Blended rows with their gradients in `(x, y)`.
fn blended_rows(x: f64, y: f64, object: &PolygonObject) -> (Vec<f64>, Vec<[f64; 2]>) {
    let regions = object.regions();
    let (w, dw) = blend_weights_with_slope(x, object.blend_breaks(), object.alpha());
    let rows = regions[0].num_rows();
    let mut val = vec![0.0; rows];
    let mut grad = vec![[0.0; 2]; rows];
    for (l, reg) in regions.iter().enumerate() {
        for r in 0..rows {
            let a = reg.rows()[r];
            let f = a[0] * x + a[1] * y - reg.offsets()[r];
            val[r] += w[l] * f;
            grad[r][0] += dw[l] * f + w[l] * a[0];
            grad[r][1] += w[l] * a[1];
        }
    }
    (val, grad)
}

fn region_rows(x: f64, y: f64, reg: &ConvexRegion) -> (Vec<f64>, Vec<[f64; 2]>) {
    let val = reg.residual([x, y]);
    (val, reg.rows().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
enum StateMode {
    Convex,
    Blend,
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Layout {
    segments: usize,
    pushers: usize,
    active: Vec<Vec<usize>>,
    pose: Option<usize>,
    twist: Vec<usize>,
    prob: Option<usize>,
    /// Indices of `T` and `delta`.
    time: Option<(usize, usize)>,
    n_vars: usize,
}

impl Layout {
    fn new(segments: usize, pushers: usize, options: &AssemblyOptions, fixed: Option<&[usize]>) -> Layout {
        let active: Vec<Vec<usize>> = match fixed {
            Some(f) => f.iter().map(|&m| vec![m]).collect(),
            None => vec![(0..pushers).collect(); segments],
        };
        let mut off = 0;
        let pose = options.direct_transcription.then(|| {
            off += 3 * segments;
            0
        });
        let mut twist = Vec::with_capacity(segments);
        for a in &active {
            twist.push(off);
            off += 3 * a.len();
        }
        let prob = (fixed.is_none() && pushers > 1).then(|| {
            let p = off;
            off += segments * pushers;
            p
        });
        let time = options.free_time.then(|| {
            let t = (off, off + 1);
            off += 2;
            t
        });
        Layout {
            segments,
            pushers,
            active,
            pose,
            twist,
            prob,
            time,
            n_vars: off,
        }
    }

    fn twist_idx(&self, n: usize, j: usize) -> usize {
        self.twist[n] + 3 * j
    }

    fn prob_idx(&self, n: usize, m: usize) -> Option<usize> {
        self.prob.map(|p| p + n * self.pushers + m)
    }
}

/// First-order sensitivity of a pose: value plus sparse `(variable, dP/dvar)`.
#[derive(Debug, Clone)]
struct PoseSens {
    val: [f64; 3],
    d: Vec<(usize, [f64; 3])>,
}

/// Assembled NLP over a flat decision vector with fixed motion cones.
#[derive(Debug, Clone)]
pub struct NlpBundle<'a> {
    problem: &'a PushProblem,
    options: AssemblyOptions,
    layout: Layout,
    state: StateMode,
    /// `cones[n][j]` for the `j`-th active pusher of segment `n`.
    cones: Vec<Vec<MotionCone>>,
    n_mc: usize,
    n_state: usize,
}

/// Builds a bundle with cones evaluated along the initializer.
pub fn assemble<'a>(problem: &'a PushProblem, options: AssemblyOptions) -> Result<NlpBundle<'a>, ContactError> {
    let init = TrajectoryState::initial(problem);
    NlpBundle::new(problem, options, Assignment::default(), &init.poses)
}

impl<'a> NlpBundle<'a> {
    /// `cone_poses` supplies `P_0..P_{N-1}` (extra entries are ignored).
    pub fn new(
        problem: &'a PushProblem,
        options: AssemblyOptions,
        assignment: Assignment,
        cone_poses: &[[f64; 3]],
    ) -> Result<NlpBundle<'a>, ContactError> {
        let layout = Layout::new(
            problem.segments,
            problem.num_pushers(),
            &options,
            assignment.pushers.as_deref(),
        );
        let state = match assignment.regions {
            Some(r) => StateMode::Fixed(r),
            None if problem.object.is_convex_object() => StateMode::Convex,
            None => StateMode::Blend,
        };
        let cones = build_cones(problem, &layout.active, cone_poses)?;
        let n_mc = cones.iter().flatten().map(|c| c.halfspaces().len()).sum();
        let n_state = (1..=problem.segments)
            .map(|k| match &state {
                StateMode::Fixed(r) => problem.object.regions()[r[k - 1]].num_rows(),
                _ => problem.object.regions()[0].num_rows(),
            })
            .sum();
        Ok(NlpBundle {
            problem,
            options,
            layout,
            state,
            cones,
            n_mc,
            n_state,
        })
    }

    pub fn problem(&self) -> &PushProblem {
        self.problem
    }

    pub fn options(&self) -> AssemblyOptions {
        self.options
    }

    pub fn cones(&self) -> &[Vec<MotionCone>] {
        &self.cones
    }

    /// Active pushers per segment.
    pub fn active_pushers(&self) -> &[Vec<usize>] {
        &self.layout.active
    }

    pub fn has_probabilities(&self) -> bool {
        self.layout.prob.is_some()
    }

    pub fn initializer(&self) -> Vec<f64> {
        self.pack(&TrajectoryState::initial(self.problem))
    }

    /// Writes a trajectory into this bundle's layout.
    pub fn pack(&self, st: &TrajectoryState) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.n_vars];
        if let Some(off) = l.pose {
            for k in 1..=l.segments {
                x[off + 3 * (k - 1)..off + 3 * k].copy_from_slice(&st.poses[k]);
            }
        }
        for n in 0..l.segments {
            for (j, &m) in l.active[n].iter().enumerate() {
                let i = l.twist_idx(n, j);
                x[i..i + 3].copy_from_slice(&st.twists[n][m]);
            }
            for m in 0..l.pushers {
                if let Some(i) = l.prob_idx(n, m) {
                    x[i] = st.probs[n][m];
                }
            }
        }
        if let Some((t, d)) = l.time {
            x[t] = st.horizon;
            x[d] = st.horizon / (l.segments - 1) as f64;
        }
        let lb = self.lower_bounds();
        let ub = self.upper_bounds();
        for ((v, lo), hi) in x.iter_mut().zip(&lb).zip(&ub) {
            *v = v.clamp(*lo, *hi);
        }
        x
    }

    /// Reads a decision vector back; inactive twists are zero, fixed
    /// schedules become one-hot rows.
    pub fn unpack(&self, x: &[f64]) -> TrajectoryState {
        let l = &self.layout;
        let mut twists = vec![vec![[0.0; 3]; l.pushers]; l.segments];
        let mut probs = vec![vec![0.0; l.pushers]; l.segments];
        for n in 0..l.segments {
            for (j, &m) in l.active[n].iter().enumerate() {
                let i = l.twist_idx(n, j);
                twists[n][m] = [x[i], x[i + 1], x[i + 2]];
                probs[n][m] = self.prob(x, n, j);
            }
        }
        TrajectoryState {
            poses: self.poses(x).into_iter().map(|p| p.val).collect(),
            twists,
            probs,
            horizon: self.delta(x) * (l.segments - 1) as f64,
        }
    }

    fn delta(&self, x: &[f64]) -> f64 {
        match self.layout.time {
            Some((_, d)) => x[d],
            None => self.problem.horizon / (self.layout.segments - 1) as f64,
        }
    }

    fn prob(&self, x: &[f64], n: usize, j: usize) -> f64 {
        match self.layout.prob_idx(n, self.layout.active[n][j]) {
            Some(i) => x[i],
            None => 1.0,
        }
    }

    fn twist(&self, x: &[f64], n: usize, j: usize) -> [f64; 3] {
        let i = self.layout.twist_idx(n, j);
        [x[i], x[i + 1], x[i + 2]]
    }

    /// Mixed twist `u_n = Σ_j p_j xi_j` with its sparse sensitivity.
    fn mixed(&self, x: &[f64], n: usize) -> ([f64; 3], Vec<(usize, [f64; 3])>) {
        let l = &self.layout;
        let mut u = [0.0; 3];
        let mut d = Vec::new();
        for (j, &m) in l.active[n].iter().enumerate() {
            let p = self.prob(x, n, j);
            let xi = self.twist(x, n, j);
            let ti = l.twist_idx(n, j);
            for c in 0..3 {
                u[c] += p * xi[c];
                let mut e = [0.0; 3];
                e[c] = p;
                d.push((ti + c, e));
            }
            if let Some(pi) = l.prob_idx(n, m) {
                d.push((pi, xi));
            }
        }
        (u, d)
    }

    /// `P_0..P_N` with sensitivities; integrated forward in single shooting.
    fn poses(&self, x: &[f64]) -> Vec<PoseSens> {
        let l = &self.layout;
        let p0 = self.problem.start;
        let mut out = vec![PoseSens {
            val: [p0.x, p0.y, p0.theta],
            d: Vec::new(),
        }];
        match l.pose {
            Some(off) => {
                for k in 1..=l.segments {
                    let i = off + 3 * (k - 1);
                    out.push(PoseSens {
                        val: [x[i], x[i + 1], x[i + 2]],
                        d: (0..3)
                            .map(|c| {
                                let mut e = [0.0; 3];
                                e[c] = 1.0;
                                (i + c, e)
                            })
                            .collect(),
                    });
                }
            }
            None => {
                let delta = self.delta(x);
                for n in 0..l.segments {
                    let (u, du) = self.mixed(x, n);
                    let prev = &out[n];
                    let mut val = prev.val;
                    for c in 0..3 {
                        val[c] += delta * u[c];
                    }
                    let mut d = prev.d.clone();
                    d.extend(du.into_iter().map(|(i, v)| (i, [delta * v[0], delta * v[1], delta * v[2]])));
                    if let Some((_, di)) = l.time {
                        d.push((di, u));
                    }
                    out.push(PoseSens { val, d });
                }
            }
        }
        out
    }

    /// Objective parts; accumulates the gradient when requested.
    pub fn breakdown(&self, x: &[f64]) -> ObjectiveBreakdown {
        self.objective_parts(x, None)
    }

    fn objective_parts(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> ObjectiveBreakdown {
        let w = &self.problem.weights;
        let l = &self.layout;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let poses = self.poses(x);
        let add = |g: &mut Option<&mut [f64]>, sens: &PoseSens, gp: [f64; 3], sign: f64| {
            if let Some(g) = g.as_deref_mut() {
                for (i, d) in &sens.d {
                    g[*i] += sign * (gp[0] * d[0] + gp[1] * d[1] + gp[2] * d[2]);
                }
            }
        };

        let goal = self.problem.goal;
        let last = &poses[l.segments];
        let e = [
            last.val[0] - goal.x,
            last.val[1] - goal.y,
            wrap_angle(last.val[2] - goal.theta),
        ];
        let (tv, tg) = weighted_norm(e, w.lambda_s, w.lambda_theta);
        add(&mut grad, last, tg, 1.0);

        let mut path = 0.0;
        for n in 0..l.segments {
            let (a, b) = (&poses[n], &poses[n + 1]);
            let dp = [b.val[0] - a.val[0], b.val[1] - a.val[1], b.val[2] - a.val[2]];
            let (v, g) = weighted_norm(dp, w.lambda_p * w.lambda_s, w.lambda_p * w.lambda_theta);
            path += v;
            add(&mut grad, b, g, 1.0);
            add(&mut grad, a, g, -1.0);
        }

        let mut entropy = 0.0;
        let mut kl = 0.0;
        if l.prob.is_some() {
            let m = l.pushers;
            let p = |n: usize, k: usize| x[l.prob_idx(n, k).unwrap()];
            for n in 0..l.segments {
                for k in 0..m {
                    let v = p(n, k);
                    let lg = (v + LOG_EPS).ln();
                    entropy -= w.lambda_e * v * lg;
                    if let Some(g) = grad.as_deref_mut() {
                        g[l.prob_idx(n, k).unwrap()] -= w.lambda_e * (lg + v / (v + LOG_EPS));
                    }
                }
            }
            if self.options.use_kl {
                for n in 0..l.segments - 1 {
                    for k in 0..m {
                        let (q, r) = (p(n + 1, k), p(n, k));
                        let ratio = ((q + LOG_EPS) / (r + LOG_EPS)).ln();
                        kl += w.lambda_kl * q * ratio;
                        if let Some(g) = grad.as_deref_mut() {
                            g[l.prob_idx(n + 1, k).unwrap()] += w.lambda_kl * (ratio + q / (q + LOG_EPS));
                            g[l.prob_idx(n, k).unwrap()] -= w.lambda_kl * q / (r + LOG_EPS);
                        }
                    }
                }
            }
        }
        ObjectiveBreakdown {
            terminal: tv,
            path,
            entropy,
            kl,
            total: tv + path + entropy + kl,
        }
    }

    fn eq_eval(&self, x: &[f64], out: &mut [f64], mut jac: Option<&mut [f64]>) {
        let l = &self.layout;
        let nv = l.n_vars;
        let mut row = 0;
        if let Some(j) = jac.as_deref_mut() {
            j.iter_mut().for_each(|v| *v = 0.0);
        }
        if l.prob.is_some() {
            for n in 0..l.segments {
                out[row] = (0..l.pushers).map(|k| x[l.prob_idx(n, k).unwrap()]).sum::<f64>() - 1.0;
                if let Some(j) = jac.as_deref_mut() {
                    for k in 0..l.pushers {
                        j[row * nv + l.prob_idx(n, k).unwrap()] = 1.0;
                    }
                }
                row += 1;
            }
        }
        if l.pose.is_some() {
            let poses = self.poses(x);
            let delta = self.delta(x);
            for n in 0..l.segments {
                let (u, du) = self.mixed(x, n);
                for c in 0..3 {
                    out[row + c] = poses[n + 1].val[c] - poses[n].val[c] - delta * u[c];
                }
                if let Some(j) = jac.as_deref_mut() {
                    for c in 0..3 {
                        for (i, d) in &poses[n + 1].d {
                            j[(row + c) * nv + i] += d[c];
                        }
                        for (i, d) in &poses[n].d {
                            j[(row + c) * nv + i] -= d[c];
                        }
                        for (i, d) in &du {
                            j[(row + c) * nv + i] -= delta * d[c];
                        }
                        if let Some((_, di)) = l.time {
                            j[(row + c) * nv + di] -= u[c];
                        }
                    }
                }
                row += 3;
            }
        }
        if let Some((ti, di)) = l.time {
            out[row] = x[di] * (l.segments - 1) as f64 - x[ti];
            if let Some(j) = jac.as_mut() {
                j[row * nv + di] = (l.segments - 1) as f64;
                j[row * nv + ti] = -1.0;
            }
        }
    }

    fn ineq_eval(&self, x: &[f64], out: &mut [f64], mut jac: Option<&mut [f64]>) {
        let l = &self.layout;
        let nv = l.n_vars;
        if let Some(j) = jac.as_deref_mut() {
            j.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut row = 0;
        for n in 0..l.segments {
            for j in 0..l.active[n].len() {
                let xi = self.twist(x, n, j);
                let ti = l.twist_idx(n, j);
                for h in self.cones[n][j].halfspaces() {
                    out[row] = h[0] * xi[0] + h[1] * xi[1] + h[2] * xi[2];
                    if let Some(jm) = jac.as_deref_mut() {
                        jm[row * nv + ti..row * nv + ti + 3].copy_from_slice(h);
                    }
                    row += 1;
                }
            }
        }
        let poses = self.poses(x);
        let object = &self.problem.object;
        for (k, pose) in poses.iter().enumerate().skip(1) {
            let (px, py) = (pose.val[0], pose.val[1]);
            let (vals, grads) = match &self.state {
                StateMode::Convex => region_rows(px, py, &object.regions()[0]),
                StateMode::Blend => blended_rows(px, py, object),
                StateMode::Fixed(r) => region_rows(px, py, &object.regions()[r[k - 1]]),
            };
            for (v, g) in vals.iter().zip(&grads) {
                out[row] = *v;
                if let Some(jm) = jac.as_deref_mut() {
                    for (i, d) in &pose.d {
                        jm[row * nv + i] += g[0] * d[0] + g[1] * d[1];
                    }
                }
                row += 1;
            }
        }
    }

    /// Largest motion-cone residual of the active twists under this bundle's cones.
    pub fn max_cone_residual(&self, x: &[f64]) -> f64 {
        let mut out = vec![0.0; self.num_ineq()];
        self.ineq_eval(x, &mut out, None);
        out[..self.n_mc].iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn num_cone_rows(&self) -> usize {
        self.n_mc
    }
}

fn smooth_norm(v: &[f64]) -> (f64, Vec<f64>) {
    let s = (v.iter().map(|a| a * a).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    (s - NORM_EPS, v.iter().map(|a| a / s).collect())
}

/// `ws·‖(e_x, e_y)‖ + wt·|e_θ|`, both smoothed, with its gradient.
fn weighted_norm(e: [f64; 3], ws: f64, wt: f64) -> (f64, [f64; 3]) {
    let (a, ga) = smooth_norm(&e[..2]);
    let (b, gb) = smooth_norm(&e[2..]);
    (ws * a + wt * b, [ws * ga[0], ws * ga[1], wt * gb[0]])
}

fn build_cones(
    problem: &PushProblem,
    active: &[Vec<usize>],
    cone_poses: &[[f64; 3]],
) -> Result<Vec<Vec<MotionCone>>, ContactError> {
    active
        .iter()
        .enumerate()
        .map(|(n, ms)| {
            let pose = PlanarPose::from(cone_poses[n]);
            ms.iter()
                .map(|&m| {
                    motion_cone(
                        &problem.pushers[m],
                        &problem.support,
                        &pose,
                        &problem.object,
                        problem.gravity,
                        &problem.cone,
                    )
                })
                .collect()
        })
        .collect()
}

impl NlpProblem for NlpBundle<'_> {
    fn num_vars(&self) -> usize {
        self.layout.n_vars
    }

    fn num_eq(&self) -> usize {
        let l = &self.layout;
        l.prob.map_or(0, |_| l.segments)
            + l.pose.map_or(0, |_| 3 * l.segments)
            + l.time.map_or(0, |_| 1)
    }

    fn num_ineq(&self) -> usize {
        self.n_mc + self.n_state
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.bounds().0
    }

    fn upper_bounds(&self) -> Vec<f64> {
        self.bounds().1
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective_parts(x, None).total
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.objective_parts(x, Some(grad));
    }

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]) {
        self.eq_eval(x, out, None)
    }

    fn eq_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let mut tmp = vec![0.0; self.num_eq()];
        self.eq_eval(x, &mut tmp, Some(jac))
    }

    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]) {
        self.ineq_eval(x, out, None)
    }

    fn ineq_jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let mut tmp = vec![0.0; self.num_ineq()];
        self.ineq_eval(x, &mut tmp, Some(jac))
    }
}

impl NlpBundle<'_> {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let p = self.problem;
        let mut lb = vec![-p.twist_bound; l.n_vars];
        let mut ub = vec![p.twist_bound; l.n_vars];
        if let Some(off) = l.pose {
            let (lo, hi) = p.object.bounding_box();
            for k in 0..l.segments {
                let i = off + 3 * k;
                lb[i..i + 3].copy_from_slice(&[lo[0], lo[1], -2.0 * std::f64::consts::PI]);
                ub[i..i + 3].copy_from_slice(&[hi[0], hi[1], 2.0 * std::f64::consts::PI]);
            }
        }
        if let Some(off) = l.prob {
            for i in off..off + l.segments * l.pushers {
                lb[i] = 0.0;
                ub[i] = 1.0;
            }
        }
        if let Some((t, d)) = l.time {
            let [lo, hi] = p.horizon_bounds;
            let k = (l.segments - 1) as f64;
            lb[t] = lo;
            ub[t] = hi;
            lb[d] = lo / k;
            ub[d] = hi / k;
        }
        (lb, ub)
    }
}
