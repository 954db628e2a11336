//! Frictional contact mechanics for stable pushing and polyhedral motion cones.
//!
//! A pusher is a set of point contacts on the object boundary. Its generalized
//! friction cone is swept along its boundary; each pusher wrench is balanced
//! against the support's ellipsoidal limit surface and gravity, and the
//! resulting sliding directions are collected into a polyhedral motion cone.

mod hull;

pub use hull::{cone_hull, ConeHull};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::ContactError;
use crate::se2::{adjoint_from_frame, AdjointMap, PlanarPose, PlanarTwist, PlanarWrench, PolygonObject};

/// Default gravity in the support (world-aligned) frame, m/s².
pub const DEFAULT_GRAVITY: [f64; 2] = [0.0, -9.81];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub point: [f64; 2],
    pub normal: [f64; 2],
}

/// `K >= 1` frictional point contacts with inward unit normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PusherFile", into = "PusherFile")]
pub struct PusherContact {
    contacts: Vec<ContactPoint>,
    mu_p: f64,
}

#[derive(Serialize, Deserialize)]
struct PusherFile {
    contacts: Vec<ContactPoint>,
    mu_p: f64,
}

impl TryFrom<PusherFile> for PusherContact {
    type Error = ContactError;
    fn try_from(f: PusherFile) -> Result<Self, Self::Error> {
        PusherContact::new(f.contacts, f.mu_p)
    }
}

impl From<PusherContact> for PusherFile {
    fn from(p: PusherContact) -> Self {
        PusherFile {
            contacts: p.contacts,
            mu_p: p.mu_p,
        }
    }
}

impl PusherContact {
    pub fn new(contacts: Vec<ContactPoint>, mu_p: f64) -> Result<Self, ContactError> {
        if contacts.is_empty() {
            return Err(ContactError::InvalidPusher("at least one contact required".into()));
        }
        if !(mu_p > 0.0) || !mu_p.is_finite() {
            return Err(ContactError::InvalidPusher(format!("mu_p must be > 0, got {mu_p}")));
        }
        for c in &contacts {
            let n = (c.normal[0].powi(2) + c.normal[1].powi(2)).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(ContactError::InvalidPusher(format!(
                    "contact normal {:?} is not unit length",
                    c.normal
                )));
            }
            if c.point.iter().any(|v| !v.is_finite()) {
                return Err(ContactError::InvalidPusher("non-finite contact point".into()));
            }
        }
        Ok(PusherContact { contacts, mu_p })
    }

    pub fn contacts(&self) -> &[ContactPoint] {
        &self.contacts
    }

    pub fn mu_p(&self) -> f64 {
        self.mu_p
    }

    pub fn with_friction(&self, mu_p: f64) -> Result<Self, ContactError> {
        PusherContact::new(self.contacts.clone(), mu_p)
    }
}

/// Gripper support: friction, normal force, contact radius and pressure constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportFile", into = "SupportFile")]
pub struct SupportModel {
    mu_s: f64,
    normal_force: f64,
    radius: f64,
    pressure: f64,
}

#[derive(Serialize, Deserialize)]
struct SupportFile {
    mu_s: f64,
    #[serde(rename = "F_N")]
    normal_force: f64,
    r: f64,
    e: f64,
}

impl TryFrom<SupportFile> for SupportModel {
    type Error = ContactError;
    fn try_from(f: SupportFile) -> Result<Self, Self::Error> {
        SupportModel::new(f.mu_s, f.normal_force, f.r, f.e)
    }
}

impl From<SupportModel> for SupportFile {
    fn from(s: SupportModel) -> Self {
        SupportFile {
            mu_s: s.mu_s,
            normal_force: s.normal_force,
            r: s.radius,
            e: s.pressure,
        }
    }
}

impl SupportModel {
    pub fn new(mu_s: f64, normal_force: f64, radius: f64, pressure: f64) -> Result<Self, ContactError> {
        let bad = |name: &str, v: f64| ContactError::InvalidSupport(format!("{name} must be > 0, got {v}"));
        if !(mu_s > 0.0 && mu_s.is_finite()) {
            return Err(bad("mu_s", mu_s));
        }
        if !(normal_force > 0.0 && normal_force.is_finite()) {
            return Err(bad("F_N", normal_force));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(bad("r", radius));
        }
        // e = 0 would make the torque axis of the limit surface infinitely stiff
        if !(pressure > 0.0 && pressure <= 1.0) {
            return Err(ContactError::InvalidSupport(format!(
                "e must lie in (0, 1], got {pressure}"
            )));
        }
        Ok(SupportModel {
            mu_s,
            normal_force,
            radius,
            pressure,
        })
    }

    pub fn mu_s(&self) -> f64 {
        self.mu_s
    }

    pub fn normal_force(&self) -> f64 {
        self.normal_force
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn pressure(&self) -> f64 {
        self.pressure
    }

    /// Maximum transmissible friction force `mu_s * F_N`.
    pub fn friction_scale(&self) -> f64 {
        self.mu_s * self.normal_force
    }

    /// `A = diag(1, 1, (r e)^-2)`.
    pub fn limit_surface(&self) -> Matrix3<f64> {
        let re = self.radius * self.pressure;
        Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0 / (re * re)))
    }
}

/// Friction cone edges of one contact as object-frame wrenches of unit force.
pub fn friction_cone_edges(point: [f64; 2], normal: [f64; 2], mu_p: f64) -> (PlanarWrench, PlanarWrench) {
    let beta = mu_p.atan();
    let frame = adjoint_from_frame(point, normal[1].atan2(normal[0]));
    let (s, c) = beta.sin_cos();
    (
        frame.apply(&PlanarWrench::new(c, s, 0.0)),
        frame.apply(&PlanarWrench::new(c, -s, 0.0)),
    )
}

/// Convex cone of unit wrenches, generators in cyclic boundary order.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchCone {
    generators: Vec<PlanarWrench>,
}

impl WrenchCone {
    pub fn generators(&self) -> &[PlanarWrench] {
        &self.generators
    }

    /// Outward facet normals; a wrench is in the cone iff every `n · w <= 0`.
    pub fn halfspaces(&self) -> Vec<[f64; 3]> {
        let gens: Vec<Vector3<f64>> = self.generators.iter().map(|w| w.to_vector()).collect();
        match cone_hull(&gens) {
            Ok(h) => h.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Consecutive generator pairs along the cone boundary.
    fn boundary_edges(&self) -> Vec<(PlanarWrench, PlanarWrench)> {
        let g = &self.generators;
        match g.len() {
            0 | 1 => Vec::new(),
            2 => vec![(g[0], g[1])],
            k => (0..k).map(|i| (g[i], g[(i + 1) % k])).collect(),
        }
    }
}

pub fn generalized_friction_cone(pusher: &PusherContact) -> Result<WrenchCone, ContactError> {
    let mut edges = Vec::with_capacity(2 * pusher.contacts.len());
    for c in &pusher.contacts {
        let (a, b) = friction_cone_edges(c.point, c.normal, pusher.mu_p);
        edges.push(a.normalized().to_vector());
        edges.push(b.normalized().to_vector());
    }
    let generators = match cone_hull(&edges) {
        Ok(h) => h.extreme.iter().map(|&i| PlanarWrench::from_vector(&edges[i])).collect(),
        Err(ContactError::EmptyCone) => {
            let kept = hull::distinct_directions(&edges);
            kept.iter().map(|&i| PlanarWrench::from_vector(&edges[i])).collect()
        }
        Err(e) => return Err(e),
    };
    Ok(WrenchCone { generators })
}

/// Stable-push operating point on the limit surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StablePushSolution {
    /// Unit support wrench in the support frame, on the limit surface.
    pub w_s_hat: PlanarWrench,
    /// Pusher wrench magnitude (N).
    pub magnitude: f64,
    /// Unit sliding twist of the support relative to the object, support frame.
    pub twist_dir: PlanarTwist,
}

/// Residual of the stable-push force balance
/// `a w_p + (mu_s F_N) Ad_SO^T w_s + m g`.
pub fn force_balance_residual(
    w_p_hat: &PlanarWrench,
    support: &SupportModel,
    support_frame: &AdjointMap,
    gravity_wrench: &PlanarWrench,
    sol: &StablePushSolution,
) -> Vector3<f64> {
    w_p_hat.to_vector() * sol.magnitude
        + support_frame.matrix() * sol.w_s_hat.to_vector() * support.friction_scale()
        + gravity_wrench.to_vector()
}

/// Solves the force balance together with the ellipsoidal limit surface by
/// damped Newton iteration from the six ellipsoid axis points.
pub fn solve_stable_push(
    w_p_hat: &PlanarWrench,
    support: &SupportModel,
    support_frame: &AdjointMap,
    gravity_wrench: &PlanarWrench,
) -> Result<StablePushSolution, ContactError> {
    let wp = w_p_hat.to_vector();
    let c = support.friction_scale();
    let a_mat = support.limit_surface();
    let m = support_frame.matrix() * c;
    let g = gravity_wrench.to_vector();
    let re = support.radius() * support.pressure();
    let force_scale = 1.0 + c + g.norm();

    let residual = |z: &Vector4<f64>| -> Vector4<f64> {
        let w = Vector3::new(z[0], z[1], z[2]);
        let bal = wp * z[3] + m * w + g;
        Vector4::new(bal[0], bal[1], bal[2], w.dot(&(a_mat * w)) - 1.0)
    };

    let seeds = [
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(-1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, re),
        Vector3::new(0.0, 0.0, -re),
    ];
    let mut best: Option<Vector4<f64>> = None;
    for w0 in seeds {
        let a0 = (-(wp.dot(&(m * w0 + g))) / wp.norm_squared()).max(0.0);
        let mut z = Vector4::new(w0[0], w0[1], w0[2], a0);
        let mut r = residual(&z);
        for _ in 0..100 {
            if r.amax() <= 1e-13 * force_scale {
                break;
            }
            let w = Vector3::new(z[0], z[1], z[2]);
            let aw = a_mat * w * 2.0;
            #[rustfmt::skip]
            let jac = Matrix4::new(
                m[(0, 0)], m[(0, 1)], m[(0, 2)], wp[0],
                m[(1, 0)], m[(1, 1)], m[(1, 2)], wp[1],
                m[(2, 0)], m[(2, 1)], m[(2, 2)], wp[2],
                aw[0],     aw[1],     aw[2],     0.0,
            );
            let Some(step) = jac.lu().solve(&(-r)) else {
                break;
            };
            let mut t = 1.0;
            let norm0 = r.norm();
            loop {
                let trial = z + step * t;
                let rt = residual(&trial);
                if rt.norm() < norm0 || t < 1e-6 {
                    z = trial;
                    r = rt;
                    break;
                }
                t *= 0.5;
            }
        }
        if r.amax() <= 1e-10 && z[3] >= -1e-12 {
            z[3] = z[3].max(0.0);
            if best.is_none_or(|b| z[3] < b[3] - 1e-12) {
                best = Some(z);
            }
        }
    }
    let z = best.ok_or(ContactError::NoStablePush([wp[0], wp[1], wp[2]]))?;
    let w_s = Vector3::new(z[0], z[1], z[2]);
    let dir = (a_mat * w_s).normalize();
    Ok(StablePushSolution {
        w_s_hat: PlanarWrench::from_vector(&w_s),
        magnitude: z[3],
        twist_dir: PlanarTwist::from_vector(&dir),
    })
}

/// Gravity wrench in the object frame for a grasp rotated by `theta`.
/// The support frame is world-aligned, so gravity rotates into the object
/// frame by `theta`; it acts at the center of mass and carries no torque.
pub fn gravity_wrench(mass: f64, gravity: [f64; 2], theta: f64) -> PlanarWrench {
    let (s, c) = theta.sin_cos();
    PlanarWrench::new(
        mass * (c * gravity[0] - s * gravity[1]),
        mass * (s * gravity[0] + c * gravity[1]),
        0.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeConfig {
    /// Intermediate samples per boundary edge of the pusher cone.
    pub boundary_samples: usize,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig { boundary_samples: 8 }
    }
}

/// Polyhedral motion cone. Twists are rates of the grasp pose, expressed in
/// the object frame (the coordinates in which [`PlanarPose`] evolves).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCone {
    generators: Vec<PlanarTwist>,
    halfspaces: Vec<[f64; 3]>,
    sources: Vec<PlanarWrench>,
}

impl MotionCone {
    pub fn generators(&self) -> &[PlanarTwist] {
        &self.generators
    }

    /// Unit normals `n` with the cone `{ xi : n · xi <= 0 }`.
    pub fn halfspaces(&self) -> &[[f64; 3]] {
        &self.halfspaces
    }

    /// Pusher wrench that produced each generator.
    pub fn sources(&self) -> &[PlanarWrench] {
        &self.sources
    }

    pub fn max_residual(&self, xi: &PlanarTwist) -> f64 {
        mc_membership(xi, self).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, xi: &PlanarTwist, tol: f64) -> bool {
        self.max_residual(xi) <= tol
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, xi: &PlanarTwist) -> PlanarTwist {
        if self.contains(xi, 0.0) {
            return *xi;
        }
        let mut q = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let c = [-xi.v1, -xi.v2, -xi.omega];
        let amat: Vec<f64> = self.halfspaces.iter().flatten().copied().collect();
        let bvec = vec![0.0; self.halfspaces.len()];
        match quadprog::solve_qp(&mut q, &c, &amat, &bvec, 0, false) {
            Ok(sol) => PlanarTwist::new(sol.sol[0], sol.sol[1], sol.sol[2]),
            Err(_) => PlanarTwist::zero(),
        }
    }

    /// Builds a cone from raw directions (used for reloading exported cones).
    pub fn from_generators(gens: &[PlanarTwist]) -> Result<MotionCone, ContactError> {
        let v: Vec<Vector3<f64>> = gens.iter().map(|t| t.to_vector()).collect();
        let h = cone_hull(&v)?;
        Ok(MotionCone {
            generators: h.extreme.iter().map(|&i| PlanarTwist::from_vector(&v[i].normalize())).collect(),
            halfspaces: h.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
            sources: Vec::new(),
        })
    }
}

/// One boundary sample of the motion-cone sweep.
#[derive(Debug, Clone, Copy)]
pub struct PushSample {
    pub pusher_wrench: PlanarWrench,
    pub solution: StablePushSolution,
    /// Grasp-rate twist in the object frame.
    pub twist: PlanarTwist,
}

/// Sweeps the boundary of the pusher's generalized friction cone and solves
/// the stable push at every sample.
pub fn sweep_stable_pushes(
    pusher: &PusherContact,
    support: &SupportModel,
    pose: &PlanarPose,
    object: &PolygonObject,
    gravity: [f64; 2],
    cfg: &ConeConfig,
) -> Result<Vec<PushSample>, ContactError> {
    let cone = generalized_friction_cone(pusher)?;
    let frame = adjoint_from_frame([pose.x, pose.y], pose.theta);
    let gw = gravity_wrench(object.mass(), gravity, pose.theta);
    let (s, c) = pose.theta.sin_cos();

    let mut wrenches = Vec::new();
    let edges = cone.boundary_edges();
    let steps = cfg.boundary_samples + 1;
    for (k, (a, b)) in edges.iter().enumerate() {
        for j in 0..steps {
            let t = j as f64 / steps as f64;
            let w = a.to_vector() * (1.0 - t) + b.to_vector() * t;
            wrenches.push(PlanarWrench::from_vector(&w.normalize()));
        }
        // open chain: close the last edge explicitly
        if edges.len() == 1 && k == 0 {
            wrenches.push(*b);
        }
    }
    if wrenches.is_empty() {
        wrenches.extend(cone.generators().iter().copied());
    }

    wrenches
        .into_iter()
        .map(|w| {
            let sol = solve_stable_push(&w, support, &frame, &gw)?;
            let d = sol.twist_dir;
            Ok(PushSample {
                pusher_wrench: w,
                solution: sol,
                twist: PlanarTwist::new(c * d.v1 - s * d.v2, s * d.v1 + c * d.v2, d.omega),
            })
        })
        .collect()
}

pub fn motion_cone(
    pusher: &PusherContact,
    support: &SupportModel,
    pose: &PlanarPose,
    object: &PolygonObject,
    gravity: [f64; 2],
    cfg: &ConeConfig,
) -> Result<MotionCone, ContactError> {
    let samples = sweep_stable_pushes(pusher, support, pose, object, gravity, cfg)?;
    let dirs: Vec<Vector3<f64>> = samples.iter().map(|s| s.twist.to_vector()).collect();
    let hull = cone_hull(&dirs)?;
    Ok(MotionCone {
        generators: hull
            .extreme
            .iter()
            .map(|&i| PlanarTwist::from_vector(&dirs[i].normalize()))
            .collect(),
        halfspaces: hull.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
        sources: hull.extreme.iter().map(|&i| samples[i].pusher_wrench).collect(),
    })
}

/// Halfspace residuals `n_j · xi`; membership iff all are `<= 0`.
pub fn mc_membership(xi: &PlanarTwist, cone: &MotionCone) -> Vec<f64> {
    cone.halfspaces
        .iter()
        .map(|n| n[0] * xi.v1 + n[1] * xi.v2 + n[2] * xi.omega)
        .collect()
}
