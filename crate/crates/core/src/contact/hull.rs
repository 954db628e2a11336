//! Facet enumeration for pointed polyhedral cones in R³.
//!
//! Generators are centrally projected onto the plane orthogonal to an interior
//! axis; the 2D convex hull of the projections orders the extreme rays, and
//! each pair of adjacent extreme rays spans one facet.

use nalgebra::{Vector2, Vector3};

use crate::error::ContactError;

const DUP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ConeHull {
    /// Indices into the input of the extreme rays, in cyclic order.
    pub extreme: Vec<usize>,
    /// Unit facet normals; the cone is `{ v : n · v <= 0 }`.
    pub normals: Vec<Vector3<f64>>,
    /// Strictly interior unit axis.
    pub axis: Vector3<f64>,
}

/// Minimum-norm point of the generators' convex hull; for a pointed cone it
/// has a positive inner product with every generator.
fn interior_axis(gens: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let k = gens.len();
    let mut q = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            q[i * k + j] = gens[i].dot(&gens[j]);
        }
        q[i * k + i] += 1e-12;
    }
    let c = vec![0.0; k];
    let mut amat = vec![1.0; k];
    let mut bvec = vec![1.0];
    for i in 0..k {
        let mut row = vec![0.0; k];
        row[i] = -1.0;
        amat.extend(row);
        bvec.push(0.0);
    }
    let sol = quadprog::solve_qp(&mut q, &c, &amat, &bvec, 1, false).ok()?;
    let a: Vector3<f64> = gens.iter().zip(&sol.sol).map(|(g, l)| g * *l).sum();
    let n = a.norm();
    if !(n > 1e-9) {
        return None;
    }
    let a = a / n;
    gens.iter().all(|g| g.dot(&a) > 1e-12).then_some(a)
}

fn cross2(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise hull indices with collinear points dropped.
fn hull_2d(pts: &[Vector2<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&i, &j| {
        pts[i]
            .x
            .total_cmp(&pts[j].x)
            .then(pts[i].y.total_cmp(&pts[j].y))
    });
    let scale = pts
        .iter()
        .fold(1e-300_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let eps = 1e-12 * scale * scale;
    let mut lower: Vec<usize> = Vec::new();
    for &i in &idx {
        while lower.len() >= 2
            && cross2(pts[lower[lower.len() - 2]], pts[lower[lower.len() - 1]], pts[i]) <= eps
        {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &i in idx.iter().rev() {
        while upper.len() >= 2
            && cross2(pts[upper[upper.len() - 2]], pts[upper[upper.len() - 1]], pts[i]) <= eps
        {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Unit-normalizes the generators and drops duplicates; returns the kept indices.
pub fn distinct_directions(gens: &[Vector3<f64>]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, g) in gens.iter().enumerate() {
        let n = g.norm();
        if !(n > 1e-300) || !n.is_finite() {
            continue;
        }
        let u = g / n;
        if kept
            .iter()
            .all(|&k| (gens[k] / gens[k].norm() - u).norm() > DUP_TOL)
        {
            kept.push(i);
        }
    }
    kept
}

pub fn cone_hull(gens: &[Vector3<f64>]) -> Result<ConeHull, ContactError> {
    let keep = distinct_directions(gens);
    if keep.len() < 2 {
        return Err(ContactError::EmptyCone);
    }
    let unit: Vec<Vector3<f64>> = keep.iter().map(|&i| gens[i].normalize()).collect();
    let axis = interior_axis(&unit).ok_or(ContactError::NotPointed)?;

    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u);
    let proj: Vec<Vector2<f64>> = unit
        .iter()
        .map(|g| {
            let h = g.dot(&axis);
            Vector2::new(g.dot(&u) / h, g.dot(&w) / h)
        })
        .collect();

    let hull = hull_2d(&proj);
    if hull.len() >= 3 {
        let mut normals = Vec::with_capacity(hull.len());
        for k in 0..hull.len() {
            let (gi, gj) = (unit[hull[k]], unit[hull[(k + 1) % hull.len()]]);
            let mut n = gi.cross(&gj).normalize();
            if n.dot(&axis) > 0.0 {
                n = -n;
            }
            normals.push(n);
        }
        return Ok(ConeHull {
            extreme: hull.iter().map(|&k| keep[k]).collect(),
            normals,
            axis,
        });
    }

    // flat cone: a planar wedge spanned by its two extreme rays
    let (i, j) = farthest_pair(&proj);
    let (e1, e2) = (unit[i], unit[j]);
    let plane = e1.cross(&e2);
    if plane.norm() < 1e-14 {
        return Err(ContactError::EmptyCone);
    }
    let plane = plane.normalize();
    let side1 = -(e2 - e1 * e2.dot(&e1)).normalize();
    let side2 = -(e1 - e2 * e1.dot(&e2)).normalize();
    Ok(ConeHull {
        extreme: vec![keep[i], keep[j]],
        normals: vec![plane, -plane, side1, side2],
        axis: (e1 + e2).normalize(),
    })
}

fn farthest_pair(pts: &[Vector2<f64>]) -> (usize, usize) {
    let mut best = (0, 1, -1.0);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = (pts[i] - pts[j]).norm_squared();
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_pyramid() {
        let gens: Vec<Vector3<f64>> = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (0.0, 0.0)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 1.0))
            .collect();
        let hull = cone_hull(&gens).unwrap();
        assert_eq!(hull.extreme.len(), 4);
        assert!(!hull.extreme.contains(&4));
        for n in &hull.normals {
            for g in &gens {
                assert!(n.dot(g) <= 1e-12);
            }
        }
        assert!(hull.normals.iter().any(|n| n.dot(&Vector3::new(0.0, 0.0, -1.0)) > 0.0));
    }

    #[test]
    fn wedge() {
        let gens = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let hull = cone_hull(&gens).unwrap();
        assert_eq!(hull.normals.len(), 4);
        let inside = Vector3::new(0.3, 0.7, 0.0);
        assert!(hull.normals.iter().all(|n| n.dot(&inside) <= 1e-12));
        assert!(hull.normals.iter().any(|n| n.dot(&Vector3::new(0.3, 0.7, 0.1)) > 0.0));
        assert!(hull.normals.iter().any(|n| n.dot(&Vector3::new(-0.1, 0.7, 0.0)) > 0.0));
    }

    #[test]
    fn opposite_rays_are_not_pointed() {
        let gens = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(cone_hull(&gens), Err(ContactError::NotPointed)));
    }

    #[test]
    fn single_direction_is_empty() {
        let gens = vec![Vector3::new(1.0, 2.0, 0.0), Vector3::new(2.0, 4.0, 0.0)];
        assert!(matches!(cone_hull(&gens), Err(ContactError::EmptyCone)));
    }
}
