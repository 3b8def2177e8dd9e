//! Euler angle conversion for the rotation orders BVH files declare.

use nalgebra::{Unit, Vector3};

use super::Quat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn unit(self) -> Unit<Vector3<f64>> {
        match self {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        }
    }
}

/// Composes intrinsic rotations in the listed order: `R = R_a0(θ0) · R_a1(θ1) · …`.
/// Angles in degrees.
pub fn euler_to_quat(axes: &[Axis], degrees: &[f64]) -> Quat {
    axes.iter()
        .zip(degrees)
        .fold(Quat::identity(), |acc, (axis, deg)| {
            acc * Quat::from_axis_angle(&axis.unit(), deg.to_radians())
        })
}

/// Inverse of [`euler_to_quat`] for three distinct axes. Returns degrees.
pub fn quat_to_euler(q: &Quat, order: [Axis; 3]) -> Option<[f64; 3]> {
    let [i, j, k] = order.map(Axis::index);
    if i == j || j == k || i == k {
        return None;
    }
    // +1 for cyclic orders (XYZ, YZX, ZXY), −1 otherwise.
    let s = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
    let m = q.to_rotation_matrix();
    let r = m.matrix();
    let sin_b = (s * r[(i, k)]).clamp(-1.0, 1.0);
    let b = sin_b.asin();
    let (a, c) = if sin_b.abs() < 1.0 - 1e-12 {
        (
            (-s * r[(j, k)]).atan2(r[(k, k)]),
            (-s * r[(i, j)]).atan2(r[(i, i)]),
        )
    } else {
        // Gimbal lock: fold everything into the first angle.
        ((s * r[(k, j)]).atan2(r[(j, j)]), 0.0)
    };
    Some([a.to_degrees(), b.to_degrees(), c.to_degrees()])
}
