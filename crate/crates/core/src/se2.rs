//! Planar rigid-body geometry.
//!
//! Conventions used across the crate:
//!
//! * A [`PlanarPose`] `(x, y, theta)` is the pose of the gripper support frame
//!   `S` expressed in the object frame `O`, whose origin sits at the object's
//!   center of mass.
//! * Twists and wrenches are `(linear, linear, angular)` triples in one abstract
//!   plane. The third component is always the out-of-plane moment / rotation
//!   rate, so a torque is `r × f = r_x f_y - r_y f_x`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::GeometryError;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// SE(2) configuration. `theta` is normalized to `(-π, π]` on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl From<[f64; 3]> for PlanarPose {
    fn from(v: [f64; 3]) -> Self {
        PlanarPose::new(v[0], v[1], v[2])
    }
}

impl From<PlanarPose> for [f64; 3] {
    fn from(p: PlanarPose) -> Self {
        [p.x, p.y, p.theta]
    }
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        PlanarPose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        Ok(Self::new(x, y, theta))
    }

    pub fn identity() -> Self {
        PlanarPose {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &PlanarPose) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Exponential map of a body twist applied for unit time.
    pub fn exp(twist: &PlanarTwist) -> PlanarPose {
        let w = twist.omega;
        let (a, b) = if w.abs() < 1e-9 {
            // sin(w)/w and (1 - cos w)/w to second order
            (1.0 - w * w / 6.0, w / 2.0 - w * w * w / 24.0)
        } else {
            (w.sin() / w, (1.0 - w.cos()) / w)
        };
        PlanarPose::new(
            a * twist.v1 - b * twist.v2,
            b * twist.v1 + a * twist.v2,
            w,
        )
    }

    /// Logarithm map; inverse of [`PlanarPose::exp`] for `|theta| < π`.
    pub fn log(&self) -> PlanarTwist {
        let w = self.theta;
        let (a, b) = if w.abs() < 1e-9 {
            (1.0 - w * w / 6.0, w / 2.0 - w * w * w / 24.0)
        } else {
            (w.sin() / w, (1.0 - w.cos()) / w)
        };
        // invert [[a, -b], [b, a]]
        let det = a * a + b * b;
        PlanarTwist::new(
            (a * self.x + b * self.y) / det,
            (-b * self.x + a * self.y) / det,
            w,
        )
    }
}

/// Finite-difference body twist `log(prev⁻¹ · next) / dt`.
pub fn finite_difference_twist(
    prev: &PlanarPose,
    next: &PlanarPose,
    dt: f64,
) -> Result<PlanarTwist, GeometryError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(GeometryError::NonPositiveStep(dt));
    }
    Ok(prev.inverse().compose(next).log().scaled(1.0 / dt))
}

/// Planar twist `(v1, v2, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PlanarTwist {
    pub v1: f64,
    pub v2: f64,
    pub omega: f64,
}

impl From<[f64; 3]> for PlanarTwist {
    fn from(v: [f64; 3]) -> Self {
        PlanarTwist::new(v[0], v[1], v[2])
    }
}

impl From<PlanarTwist> for [f64; 3] {
    fn from(t: PlanarTwist) -> Self {
        [t.v1, t.v2, t.omega]
    }
}

impl PlanarTwist {
    pub fn new(v1: f64, v2: f64, omega: f64) -> Self {
        PlanarTwist { v1, v2, omega }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.v1, self.v2, self.omega)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        PlanarTwist::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v1, self.v2, self.omega]
    }

    pub fn scaled(self, k: f64) -> Self {
        PlanarTwist::new(self.v1 * k, self.v2 * k, self.omega * k)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.v1.is_finite() && self.v2.is_finite() && self.omega.is_finite()
    }
}

/// Planar wrench `(f1, f2, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PlanarWrench {
    pub f1: f64,
    pub f2: f64,
    pub tau: f64,
}

impl From<[f64; 3]> for PlanarWrench {
    fn from(v: [f64; 3]) -> Self {
        PlanarWrench::new(v[0], v[1], v[2])
    }
}

impl From<PlanarWrench> for [f64; 3] {
    fn from(w: PlanarWrench) -> Self {
        [w.f1, w.f2, w.tau]
    }
}

impl PlanarWrench {
    pub fn new(f1: f64, f2: f64, tau: f64) -> Self {
        PlanarWrench { f1, f2, tau }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.f1, self.f2, self.tau)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        PlanarWrench::new(v[0], v[1], v[2])
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        PlanarWrench::new(self.f1 / n, self.f2 / n, self.tau / n)
    }
}

/// Transpose adjoint of a planar frame: maps a wrench expressed in a local
/// frame (origin `r`, rotation `R`) to the reference frame,
/// `f' = R f`, `tau' = tau + r × f'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointMap {
    matrix: Matrix3<f64>,
}

impl AdjointMap {
    pub fn identity() -> Self {
        AdjointMap {
            matrix: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn apply(&self, w: &PlanarWrench) -> PlanarWrench {
        PlanarWrench::from_vector(&(self.matrix * w.to_vector()))
    }

    pub fn compose(&self, other: &AdjointMap) -> AdjointMap {
        AdjointMap {
            matrix: self.matrix * other.matrix,
        }
    }

    /// Inverse map (reference frame back to the local frame).
    pub fn inverse(&self) -> AdjointMap {
        // [[R, 0], [rxR, 1]]^-1 = [[R^T, 0], [-rxR R^T, 1]]
        let m = &self.matrix;
        let rt = Matrix3::new(m[(0, 0)], m[(1, 0)], 0.0, m[(0, 1)], m[(1, 1)], 0.0, 0.0, 0.0, 1.0);
        let row0 = m[(2, 0)] * rt[(0, 0)] + m[(2, 1)] * rt[(1, 0)];
        let row1 = m[(2, 0)] * rt[(0, 1)] + m[(2, 1)] * rt[(1, 1)];
        let mut inv = rt;
        inv[(2, 0)] = -row0;
        inv[(2, 1)] = -row1;
        AdjointMap { matrix: inv }
    }

    pub fn rotation_determinant(&self) -> f64 {
        let m = &self.matrix;
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    }
}

pub fn adjoint_from_frame(origin: [f64; 2], rotation: f64) -> AdjointMap {
    let (s, c) = rotation.sin_cos();
    let [rx, ry] = origin;
    // tau' = [-ry, rx] · R f
    let matrix = Matrix3::new(
        c,
        -s,
        0.0,
        s,
        c,
        0.0,
        -ry * c + rx * s,
        ry * s + rx * c,
        1.0,
    );
    AdjointMap { matrix }
}

/// Convex region `{ p : A p <= b }` with unit-length rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexRegion {
    #[serde(rename = "A")]
    a: Vec<[f64; 2]>,
    b: Vec<f64>,
}

impl ConvexRegion {
    pub fn new(a: Vec<[f64; 2]>, b: Vec<f64>) -> Result<Self, GeometryError> {
        if a.len() != b.len() || a.len() < 3 {
            return Err(GeometryError::InvalidRegion(format!(
                "need >= 3 rows with matching offsets, got A: {} rows, b: {}",
                a.len(),
                b.len()
            )));
        }
        let mut rows = Vec::with_capacity(a.len());
        let mut offs = Vec::with_capacity(b.len());
        for (row, off) in a.iter().zip(&b) {
            let n = (row[0] * row[0] + row[1] * row[1]).sqrt();
            if !(n > 0.0) || !off.is_finite() {
                return Err(GeometryError::InvalidRegion("zero or non-finite row".into()));
            }
            rows.push([row[0] / n, row[1] / n]);
            offs.push(off / n);
        }
        let region = ConvexRegion { a: rows, b: offs };
        if !region.is_bounded() {
            return Err(GeometryError::InvalidRegion("region is unbounded".into()));
        }
        if region.vertices().is_empty() {
            return Err(GeometryError::InvalidRegion("region is empty".into()));
        }
        Ok(region)
    }

    /// Halfspace form of a convex counter-clockwise polygon.
    pub fn from_convex_polygon(vertices: &[[f64; 2]]) -> Result<Self, GeometryError> {
        let k = vertices.len();
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for i in 0..k {
            let p = vertices[i];
            let q = vertices[(i + 1) % k];
            // outward normal of a CCW edge
            let n = [q[1] - p[1], p[0] - q[0]];
            a.push(n);
            b.push(n[0] * p[0] + n[1] * p[1]);
        }
        ConvexRegion::new(a, b)
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.a
    }

    pub fn offsets(&self) -> &[f64] {
        &self.b
    }

    pub fn num_rows(&self) -> usize {
        self.a.len()
    }

    /// `A p - b`, non-positive iff `p` is inside.
    pub fn residual(&self, p: [f64; 2]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(r, b)| r[0] * p[0] + r[1] * p[1] - b)
            .collect()
    }

    pub fn max_residual(&self, p: [f64; 2]) -> f64 {
        self.residual(p).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        self.max_residual(p) <= tol
    }

    /// Closest point at least `margin` inside every face; `p` itself when it
    /// already is. Falls back to `p` if the shrunken region is empty.
    pub fn project(&self, p: [f64; 2], margin: f64) -> [f64; 2] {
        let shrunk: Vec<f64> = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(r, b)| b - margin * (r[0] * r[0] + r[1] * r[1]).sqrt())
            .collect();
        let inside = self.a.iter().zip(&shrunk).all(|(r, b)| r[0] * p[0] + r[1] * p[1] <= *b);
        if inside {
            return p;
        }
        let mut q = vec![1.0, 0.0, 0.0, 1.0];
        let amat: Vec<f64> = self.a.iter().flatten().copied().collect();
        match quadprog::solve_qp(&mut q, &[-p[0], -p[1]], &amat, &shrunk, 0, false) {
            Ok(sol) => [sol.sol[0], sol.sol[1]],
            Err(_) => p,
        }
    }

    fn is_bounded(&self) -> bool {
        // bounded iff the normals leave no angular gap of π or more
        let mut angles: Vec<f64> = self.a.iter().map(|r| r[1].atan2(r[0])).collect();
        angles.sort_by(|x, y| x.total_cmp(y));
        let k = angles.len();
        (0..k).all(|i| {
            let next = if i + 1 < k {
                angles[i + 1]
            } else {
                angles[0] + 2.0 * PI
            };
            next - angles[i] < PI - 1e-12
        })
    }

    /// Vertices of the region: pairwise line intersections that satisfy all rows.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = Vec::new();
        for i in 0..self.a.len() {
            for j in i + 1..self.a.len() {
                let (a1, a2) = (self.a[i], self.a[j]);
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() < 1e-14 {
                    continue;
                }
                let x = (self.b[i] * a2[1] - a1[1] * self.b[j]) / det;
                let y = (a1[0] * self.b[j] - self.b[i] * a2[0]) / det;
                if self.contains([x, y], 1e-12)
                    && !out
                        .iter()
                        .any(|v| (v[0] - x).abs() < 1e-12 && (v[1] - y).abs() < 1e-12)
                {
                    out.push([x, y]);
                }
            }
        }
        out
    }

    /// Interval of `y` covered by the region on the vertical line `x = c`.
    pub fn y_interval_at(&self, c: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (r, b) in self.a.iter().zip(&self.b) {
            let rhs = b - r[0] * c;
            if r[1].abs() < 1e-14 {
                if rhs < -1e-12 {
                    return None;
                }
            } else if r[1] > 0.0 {
                hi = hi.min(rhs / r[1]);
            } else {
                lo = lo.max(rhs / r[1]);
            }
        }
        (lo <= hi + 1e-12).then_some((lo, hi))
    }
}

/// A simple counter-clockwise polygon with a user-supplied convex decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonObject {
    vertices: Vec<[f64; 2]>,
    mass: f64,
    regions: Vec<ConvexRegion>,
    blend_breaks: Vec<f64>,
    alpha: f64,
}

impl PolygonObject {
    /// Validates the polygon and its decomposition. With no regions the
    /// polygon must be convex and a single region is derived from it.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        mass: f64,
        regions: Vec<ConvexRegion>,
        blend_breaks: Vec<f64>,
        alpha: f64,
    ) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::InvalidPolygon("fewer than 3 vertices".into()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("vertices"));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(GeometryError::InvalidPolygon(format!("mass must be >= 0, got {mass}")));
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(GeometryError::InvalidPolygon(
                "vertices must be counter-clockwise".into(),
            ));
        }
        if self_intersects(&vertices) {
            return Err(GeometryError::InvalidPolygon("polygon self-intersects".into()));
        }
        let regions = if regions.is_empty() {
            if !is_convex(&vertices) {
                return Err(GeometryError::InvalidPolygon(
                    "non-convex polygon needs an explicit convex decomposition".into(),
                ));
            }
            vec![ConvexRegion::from_convex_polygon(&vertices)?]
        } else {
            regions
        };
        if regions.len() > 1 {
            if blend_breaks.len() != regions.len() - 1 {
                return Err(GeometryError::InvalidPolygon(format!(
                    "{} regions need {} blend breakpoints, got {}",
                    regions.len(),
                    regions.len() - 1,
                    blend_breaks.len()
                )));
            }
            if blend_breaks.windows(2).any(|w| w[1] <= w[0]) {
                return Err(GeometryError::InvalidPolygon(
                    "blend breakpoints must be strictly increasing".into(),
                ));
            }
            let rows = regions[0].num_rows();
            if regions.iter().any(|r| r.num_rows() != rows) {
                return Err(GeometryError::InvalidPolygon(
                    "blended regions must share the same row count".into(),
                ));
            }
            for (l, xb) in blend_breaks.iter().enumerate() {
                let shared = match (regions[l].y_interval_at(*xb), regions[l + 1].y_interval_at(*xb)) {
                    (Some((a0, a1)), Some((b0, b1))) => a0.max(b0) <= a1.min(b1) + 1e-12,
                    _ => false,
                };
                if !shared {
                    return Err(GeometryError::InvalidPolygon(format!(
                        "regions {l} and {} do not share a boundary at x = {xb}",
                        l + 1
                    )));
                }
            }
            if !(alpha > 0.0) {
                return Err(GeometryError::InvalidPolygon("alpha must be positive".into()));
            }
        }
        Ok(PolygonObject {
            vertices,
            mass,
            regions,
            blend_breaks,
            alpha,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn regions(&self) -> &[ConvexRegion] {
        &self.regions
    }

    pub fn blend_breaks(&self) -> &[f64] {
        &self.blend_breaks
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_convex_object(&self) -> bool {
        self.regions.len() == 1
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Exact containment residual: `<= 0` iff the point lies in some region.
    pub fn region_residual(&self, p: [f64; 2]) -> f64 {
        self.regions
            .iter()
            .map(|r| r.max_residual(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the region with the smallest containment residual.
    pub fn nearest_region(&self, p: [f64; 2]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, r) in self.regions.iter().enumerate() {
            let v = r.max_residual(p);
            if v < best.1 {
                best = (i, v);
            }
        }
        best.0
    }

    pub fn with_alpha(&self, alpha: f64) -> PolygonObject {
        PolygonObject {
            alpha,
            ..self.clone()
        }
    }
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let k = v.len();
    (0..k)
        .map(|i| {
            let (p, q) = (v[i], v[(i + 1) % k]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn is_convex(v: &[[f64; 2]]) -> bool {
    let k = v.len();
    (0..k).all(|i| cross(v[i], v[(i + 1) % k], v[(i + 2) % k]) >= -1e-15)
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - 1e-15
        && p[0] <= a[0].max(b[0]) + 1e-15
        && p[1] >= a[1].min(b[1]) - 1e-15
        && p[1] <= a[1].max(b[1]) + 1e-15
}

fn self_intersects(v: &[[f64; 2]]) -> bool {
    let k = v.len();
    for i in 0..k {
        for j in i + 1..k {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == k - 1) {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % k], v[j], v[(j + 1) % k]) {
                return true;
            }
        }
    }
    false
}

/// Even-odd containment test; points on the boundary count as inside.
pub fn point_in_polygon(p: [f64; 2], poly: &PolygonObject) -> bool {
    let v = poly.vertices();
    let k = v.len();
    for i in 0..k {
        let (a, b) = (v[i], v[(i + 1) % k]);
        let scale = 1.0 + a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs());
        if cross(a, b, p).abs() <= 1e-12 * scale * scale && on_segment(a, b, p) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = k - 1;
    for i in 0..k {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xc = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
