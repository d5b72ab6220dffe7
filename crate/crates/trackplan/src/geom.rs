//! Small planar geometry helpers shared by the occlusion cost and the
//! simulator's line-of-sight test.

use nalgebra::Vector2;

/// Euclidean distance from a point to the segment `[a, b]`.
pub fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    if len_sq == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// First intersection parameter `s >= 0` of the ray `origin + s * dir` with
/// the circle of radius `r` around `center`, if any. `dir` must be a unit
/// vector.
pub fn ray_circle_intersection(
    origin: Vector2<f64>,
    dir: Vector2<f64>,
    center: Vector2<f64>,
    r: f64,
) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(&dir);
    let c = oc.norm_squared() - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let s_near = -b - sqrt_disc;
    if s_near >= 0.0 {
        return Some(s_near);
    }
    let s_far = -b + sqrt_disc;
    if s_far >= 0.0 {
        return Some(s_far);
    }
    None
}
