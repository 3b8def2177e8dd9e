//! Capsule and oriented-box proxies: ray casting, surface samples, overlap.

use nalgebra::Matrix3;

use crate::skeleton::Vec3;

use super::OcclusionError;

const EPS: f64 = 1e-12;

/// Axial stations of capsule surface samples, as fractions of the segment.
const STATIONS: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Sphere-swept segment `a`→`b`.
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    /// Oriented box; `axes` columns are the box's local x, y, z in world space.
    Cuboid { center: Vec3, half: Vec3, axes: Matrix3<f64> },
}

impl Shape {
    pub fn capsule(a: Vec3, b: Vec3, radius: f64) -> Result<Shape, OcclusionError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(OcclusionError::InvalidPrimitive(format!("capsule radius {radius}")));
        }
        Ok(Shape::Capsule { a, b, radius })
    }

    pub fn cuboid(center: Vec3, half: Vec3, axes: Matrix3<f64>) -> Result<Shape, OcclusionError> {
        if half.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(OcclusionError::InvalidPrimitive(format!("box half extents {half:?}")));
        }
        if crate::skeleton::orthonormality_error(&axes) > 1e-6 || axes.determinant() < 0.0 {
            return Err(OcclusionError::InvalidPrimitive("box axes are not a rotation".into()));
        }
        Ok(Shape::Cuboid { center, half, axes })
    }

    /// Grows the shape by `margin` in every direction (box faces move out).
    pub fn inflated(&self, margin: f64) -> Shape {
        match self {
            Shape::Capsule { a, b, radius } => Shape::Capsule { a: *a, b: *b, radius: radius + margin },
            Shape::Cuboid { center, half, axes } => Shape::Cuboid {
                center: *center,
                half: half.add_scalar(margin),
                axes: *axes,
            },
        }
    }

    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        match self {
            Shape::Capsule { a, b, radius } => ((a + b) * 0.5, (b - a).norm() * 0.5 + radius),
            Shape::Cuboid { center, half, .. } => (*center, half.norm()),
        }
    }

    /// Euclidean distance from `p` to the solid; 0 inside.
    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Capsule { a, b, radius } => (point_segment_distance(p, a, b) - radius).max(0.0),
            Shape::Cuboid { center, half, axes } => {
                let q = axes.transpose() * (p - center);
                q.abs().zip_map(half, |qi, hi| (qi - hi).max(0.0)).norm()
            }
        }
    }

    /// Strict interior test.
    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Shape::Capsule { a, b, radius } => point_segment_distance(p, a, b) < *radius,
            Shape::Cuboid { center, half, axes } => {
                let q = axes.transpose() * (p - center);
                (0..3).all(|i| q[i].abs() < half[i])
            }
        }
    }

    /// Deterministic surface samples: 4 axial stations × 4 azimuths for a
    /// capsule; face centers then corners for a box.
    pub fn sample_points(&self) -> Vec<Vec3> {
        match self {
            Shape::Capsule { a, b, radius } => {
                let axis = (b - a).try_normalize(EPS).unwrap_or_else(Vec3::y);
                let (e1, e2) = perpendicular_basis(&axis);
                let mut out = Vec::with_capacity(16);
                for s in STATIONS {
                    let c = a + (b - a) * s;
                    for (cos, sin) in [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)] {
                        out.push(c + (e1 * cos + e2 * sin) * *radius);
                    }
                }
                out
            }
            Shape::Cuboid { center, half, axes } => {
                let mut out = Vec::with_capacity(14);
                for i in 0..3 {
                    for s in [1.0, -1.0] {
                        out.push(center + axes.column(i) * (s * half[i]));
                    }
                }
                for sx in [1.0, -1.0] {
                    for sy in [1.0, -1.0] {
                        for sz in [1.0, -1.0] {
                            out.push(center + axes * Vec3::new(sx * half.x, sy * half.y, sz * half.z));
                        }
                    }
                }
                out
            }
        }
    }
}

fn perpendicular_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let i = axis.iamin();
    let mut helper = Vec3::zeros();
    helper[i] = 1.0;
    let e1 = axis.cross(&helper).normalize();
    (e1, axis.cross(&e1))
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 < EPS { 0.0 } else { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) };
    (p - (a + ab * s)).norm()
}

/// First entry distance of a ray into a sphere, if the origin is outside it.
fn sphere_entry(center: &Vec3, radius: f64, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let h = b * b - c;
    if h < 0.0 {
        return None;
    }
    Some(-b - h.sqrt())
}

/// Smallest `t ∈ (0, max_t)` where the ray enters the solid. Rays starting
/// inside a solid never report it. `dir` must be unit length.
pub fn ray_hit(shape: &Shape, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
    if shape.contains(origin) {
        return None;
    }
    let t = match shape {
        Shape::Capsule { a, b, radius } => capsule_entry(a, b, *radius, origin, dir),
        Shape::Cuboid { center, half, axes } => box_entry(center, half, axes, origin, dir),
    }?;
    (t > 0.0 && t < max_t).then_some(t)
}

fn capsule_entry(a: &Vec3, b: &Vec3, r: f64, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    // The capsule is the union of a finite cylinder and two end spheres; its
    // first entry is the earliest entry into any of the three.
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let ba = b - a;
    let baba = ba.norm_squared();
    if baba > EPS {
        let oa = origin - a;
        let bard = ba.dot(dir);
        let baoa = ba.dot(&oa);
        let qa = baba - bard * bard;
        if qa > EPS * baba {
            let qb = baba * oa.dot(dir) - baoa * bard;
            let qc = baba * oa.norm_squared() - baoa * baoa - r * r * baba;
            let h = qb * qb - qa * qc;
            if h >= 0.0 {
                let t = (-qb - h.sqrt()) / qa;
                let y = baoa + t * bard;
                if y >= 0.0 && y <= baba {
                    take(t);
                }
            }
        }
    }
    for c in [a, b] {
        if let Some(t) = sphere_entry(c, r, origin, dir) {
            take(t);
        }
    }
    best
}

fn box_entry(center: &Vec3, half: &Vec3, axes: &Matrix3<f64>, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    let o = axes.transpose() * (origin - center);
    let d = axes.transpose() * dir;
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < EPS {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let t1 = (-half[i] - o[i]) / d[i];
        let t2 = (half[i] - o[i]) / d[i];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_far > 0.0).then_some(t_near)
}

/// Squared distance between segments `p1q1` and `p2q2`.
pub fn segment_distance_sq(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    (p1 + d1 * s - (p2 + d2 * t)).norm_squared()
}

/// Interpenetration test. Touching surfaces do not count.
pub fn shapes_overlap(x: &Shape, y: &Shape) -> bool {
    let (cx, rx) = x.bounding_sphere();
    let (cy, ry) = y.bounding_sphere();
    if (cx - cy).norm() >= rx + ry {
        return false;
    }
    match (x, y) {
        (Shape::Capsule { a: a1, b: b1, radius: r1 }, Shape::Capsule { a: a2, b: b2, radius: r2 }) => {
            segment_distance_sq(a1, b1, a2, b2) < (r1 + r2) * (r1 + r2)
        }
        (Shape::Capsule { a, b, radius }, cuboid @ Shape::Cuboid { .. })
        | (cuboid @ Shape::Cuboid { .. }, Shape::Capsule { a, b, radius }) => {
            segment_box_distance(a, b, cuboid) < *radius
        }
        (Shape::Cuboid { center: c1, half: h1, axes: r1 }, Shape::Cuboid { center: c2, half: h2, axes: r2 }) => {
            boxes_overlap(c1, h1, r1, c2, h2, r2)
        }
    }
}

/// Distance from a segment to a box. Point-to-box distance is convex along
/// the segment, so a ternary search converges to the minimum.
fn segment_box_distance(a: &Vec3, b: &Vec3, cuboid: &Shape) -> f64 {
    let f = |s: f64| cuboid.distance(&(a + (b - a) * s));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
}

/// Separating-axis test over the 15 candidate axes of two oriented boxes.
fn boxes_overlap(
    c1: &Vec3,
    h1: &Vec3,
    r1: &Matrix3<f64>,
    c2: &Vec3,
    h2: &Vec3,
    r2: &Matrix3<f64>,
) -> bool {
    let d = c2 - c1;
    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(r1.column(i).into());
        axes.push(r2.column(i).into());
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = r1.column(i).cross(&r2.column(j));
            if c.norm_squared() > 1e-12 {
                axes.push(c.normalize());
            }
        }
    }
    let radius = |h: &Vec3, r: &Matrix3<f64>, l: &Vec3| (0..3).map(|i| h[i] * r.column(i).dot(l).abs()).sum::<f64>();
    axes.iter().all(|l| d.dot(l).abs() < radius(h1, r1, l) + radius(h2, r2, l))
}
