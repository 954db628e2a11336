//! Desk-scale benchmark scenes: a square, a T and an L, each with four face
//! pushers and a shared parallel-jaw support. The data is the JSON shipped in
//! the crate's `scenarios/` directory.

use rand::Rng;

use crate::contact::{PusherContact, SupportModel};
use crate::io::{parse_json, ObjectFile};
use crate::nlp::PushProblem;
use crate::se2::{point_in_polygon, PlanarPose, PolygonObject};

pub const OBJECT_NAMES: [&str; 3] = ["square", "t_shape", "l_shape"];

const SUPPORT: &str = include_str!("../scenarios/support.json");

macro_rules! scene {
    ($dir:literal) => {
        [
            include_str!(concat!("../scenarios/", $dir, "/object.json")),
            include_str!(concat!("../scenarios/", $dir, "/pusher_left.json")),
            include_str!(concat!("../scenarios/", $dir, "/pusher_right.json")),
            include_str!(concat!("../scenarios/", $dir, "/pusher_bottom.json")),
            include_str!(concat!("../scenarios/", $dir, "/pusher_top.json")),
        ]
    };
}

fn files(name: &str) -> [&'static str; 5] {
    match name {
        "square" => scene!("square"),
        "t_shape" | "t" | "T" => scene!("t_shape"),
        "l_shape" | "l" | "L" => scene!("l_shape"),
        other => panic!("unknown scenario {other}"),
    }
}

/// Canonical scenario name, or `None` when unknown.
pub fn canonical(name: &str) -> Option<&'static str> {
    match name {
        "square" => Some("square"),
        "t_shape" | "t" | "T" => Some("t_shape"),
        "l_shape" | "l" | "L" => Some("l_shape"),
        _ => None,
    }
}

pub fn object(name: &str) -> PolygonObject {
    parse_json::<ObjectFile>(files(name)[0], name)
        .and_then(ObjectFile::build)
        .expect("shipped object is valid")
}

pub fn square() -> PolygonObject {
    object("square")
}

pub fn t_shape() -> PolygonObject {
    object("t_shape")
}

pub fn l_shape() -> PolygonObject {
    object("l_shape")
}

pub fn pushers(name: &str) -> Vec<PusherContact> {
    files(name)[1..]
        .iter()
        .map(|t| parse_json(t, name).expect("shipped pusher is valid"))
        .collect()
}

pub fn support() -> SupportModel {
    parse_json(SUPPORT, "support.json").expect("shipped support is valid")
}

pub fn goal_for(name: &str) -> PlanarPose {
    match canonical(name) {
        Some("l_shape") => PlanarPose::new(0.02, -0.02, 0.0),
        _ => PlanarPose::new(0.02, -0.003, 0.0),
    }
}

/// Default instance of a named scene with the given start.
pub fn problem(name: &str, start: PlanarPose) -> PushProblem {
    PushProblem::new(object(name), pushers(name), support(), start, goal_for(name))
}

/// Uniform rejection sample inside the polygon, at least `margin` from the
/// bounding box edges; the orientation is the goal's unless `random_theta`.
pub fn sample_start<R: Rng>(object: &PolygonObject, goal: &PlanarPose, margin: f64, random_theta: bool, rng: &mut R) -> PlanarPose {
    let (lo, hi) = object.bounding_box();
    loop {
        let x = rng.gen_range(lo[0] + margin..hi[0] - margin);
        let y = rng.gen_range(lo[1] + margin..hi[1] - margin);
        let inside = point_in_polygon([x, y], object)
            && object.regions().iter().any(|r| r.max_residual([x, y]) <= -margin);
        if inside {
            let theta = if random_theta {
                rng.gen_range(-0.3..0.3)
            } else {
                goal.theta
            };
            return PlanarPose::new(x, y, theta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scenes_are_consistent() {
        for name in OBJECT_NAMES {
            let obj = object(name);
            let g = goal_for(name);
            assert!(point_in_polygon([g.x, g.y], &obj));
            assert!(obj.region_residual([g.x, g.y]) < 0.0);
            assert_eq!(pushers(name).len(), 4);
            for p in pushers(name) {
                for c in p.contacts() {
                    assert!(point_in_polygon(c.point, &obj), "{name}: {:?}", c.point);
                }
            }
        }
        assert!(t_shape().vertices().len() == 8 && l_shape().vertices().len() == 6);
    }

    #[test]
    fn region_membership_matches_polygon() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in OBJECT_NAMES {
            let obj = object(name);
            let (lo, hi) = obj.bounding_box();
            for _ in 0..10_000 {
                let p = [
                    rng.gen_range(lo[0] - 0.01..hi[0] + 0.01),
                    rng.gen_range(lo[1] - 0.01..hi[1] + 0.01),
                ];
                let in_regions = obj.regions().iter().any(|r| r.contains(p, 0.0));
                assert_eq!(in_regions, point_in_polygon(p, &obj), "{name} {p:?}");
            }
        }
    }

    #[test]
    fn samples_lie_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obj = t_shape();
        for _ in 0..200 {
            let s = sample_start(&obj, &goal_for("t_shape"), 0.002, false, &mut rng);
            assert!(obj.region_residual([s.x, s.y]) <= -0.002);
        }
    }
}
