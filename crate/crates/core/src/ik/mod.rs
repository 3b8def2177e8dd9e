//! Damped Gauss-Newton inverse kinematics, momentum smoothing and the
//! acceleration diagnostic.
//!
//! Poses are parameterised by local joint rotations and the root translation,
//! so bone lengths are fixed by construction. Each iteration linearises world
//! positions with respect to small world-frame rotations at every active
//! joint (columns `axis × (p_target − p_joint)`), solves the damped normal
//! equations, and maps the increments back onto local quaternions.

use nalgebra::{DMatrix, DVector, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{forward_kinematics_full, MotionSequence, Pose, Skeleton, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum IkError {
    #[error("jacobian has non-finite entries")]
    NonFiniteJacobian,
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: Box<IkError> },
    #[error("no targets")]
    NoTargets,
    #[error("target {0} has a non-positive weight or non-finite position")]
    BadTarget(usize),
    #[error("stream has {0} frames, need at least 3")]
    TooShort(usize),
    #[error("invalid ik config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the RMS residual by less than this (meters).
    pub tolerance: f64,
    pub damping: f64,
    pub damping_factor: f64,
    /// Largest per-joint rotation increment, radians.
    pub max_step: f64,
    pub solve_root_translation: bool,
    /// Undamped steps, always accepted.
    pub pure_gauss_newton: bool,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            max_iterations: 50,
            tolerance: 1e-6,
            damping: 1e-3,
            damping_factor: 10.0,
            max_step: 0.5,
            solve_root_translation: true,
            pure_gauss_newton: false,
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("damping", self.damping),
            ("damping_factor", self.damping_factor),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((name, format!("must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(("max_iterations", "must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkTarget {
    pub joint: usize,
    pub position: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedPose {
    pub pose: Pose,
    pub positions: Vec<Vec3>,
    /// Weighted RMS distance between solved and target positions, meters.
    pub residual: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted sum of squared target errors and the weighted RMS.
fn cost(positions: &[Vec3], targets: &[IkTarget]) -> (f64, f64) {
    let total_w: f64 = targets.iter().map(|t| t.weight).sum();
    let sq: f64 = targets.iter().map(|t| t.weight * (positions[t.joint] - t.position).norm_squared()).sum();
    (sq, (sq / total_w).sqrt())
}

/// Joints whose rotation moves at least one target.
fn active_joints(skeleton: &Skeleton, targets: &[IkTarget]) -> Vec<usize> {
    (0..skeleton.len())
        .filter(|&j| {
            !skeleton.joint(j).is_end_site() && targets.iter().any(|t| t.joint != j && skeleton.is_ancestor(j, t.joint))
        })
        .collect()
}

fn apply_step(skeleton: &Skeleton, pose: &Pose, active: &[usize], delta: &DVector<f64>, root: bool) -> Pose {
    let world = forward_kinematics_full(skeleton, pose);
    let mut next = pose.clone();
    let offset = if root { 3 } else { 0 };
    if root {
        next.root_translation += Vec3::new(delta[0], delta[1], delta[2]);
    }
    for (k, &j) in active.iter().enumerate() {
        let w = Vec3::new(delta[offset + 3 * k], delta[offset + 3 * k + 1], delta[offset + 3 * k + 2]);
        let parent = skeleton.parent(j).map(|p| world.rotations[p]).unwrap_or_else(UnitQuaternion::identity);
        let local_axis = parent.inverse() * w;
        next.rotations[j] = UnitQuaternion::from_scaled_axis(local_axis) * pose.rotations[j];
    }
    next
}

/// Solves one frame from `initial`. Steps are accepted only if they lower the
/// residual (unless `pure_gauss_newton`).
pub fn solve_frame(skeleton: &Skeleton, targets: &[IkTarget], initial: &Pose, cfg: &IkConfig) -> Result<SolvedPose, IkError> {
    if targets.is_empty() {
        return Err(IkError::NoTargets);
    }
    if let Some(i) = targets
        .iter()
        .position(|t| !(t.weight > 0.0 && t.weight.is_finite()) || !t.position.iter().all(|v| v.is_finite()) || t.joint >= skeleton.len())
    {
        return Err(IkError::BadTarget(i));
    }
    let active = active_joints(skeleton, targets);
    let root = cfg.solve_root_translation;
    let n = 3 * active.len() + if root { 3 } else { 0 };
    let mut pose = initial.clone();
    let mut world = forward_kinematics_full(skeleton, &pose);
    let (mut sq, mut rms) = cost(&world.positions, targets);
    let mut lambda = cfg.damping;
    let mut iterations = 0;
    let mut attempts = 0;
    let mut converged = rms <= 1e-12;
    while !converged && attempts < cfg.max_iterations && n > 0 {
        attempts += 1;
        let mut jac = DMatrix::<f64>::zeros(3 * targets.len(), n);
        let mut resid = DVector::<f64>::zeros(3 * targets.len());
        for (r, t) in targets.iter().enumerate() {
            let sw = t.weight.sqrt();
            let p = world.positions[t.joint];
            let e = t.position - p;
            for c in 0..3 {
                resid[3 * r + c] = sw * e[c];
            }
            if root {
                for c in 0..3 {
                    jac[(3 * r + c, c)] = sw;
                }
            }
            let offset = if root { 3 } else { 0 };
            for (k, &j) in active.iter().enumerate() {
                if t.joint == j || !skeleton.is_ancestor(j, t.joint) {
                    continue;
                }
                let lever = p - world.positions[j];
                for a in 0..3 {
                    let col = Vec3::ith(a, 1.0).cross(&lever);
                    for c in 0..3 {
                        jac[(3 * r + c, offset + 3 * k + a)] = sw * col[c];
                    }
                }
            }
        }
        if !jac.iter().all(|v| v.is_finite()) {
            return Err(IkError::NonFiniteJacobian);
        }
        let jt = jac.transpose();
        let mut normal = &jt * &jac;
        let grad = &jt * &resid;
        if !cfg.pure_gauss_newton {
            for i in 0..n {
                normal[(i, i)] += lambda;
            }
        }
        let delta = if cfg.pure_gauss_newton {
            normal.svd(true, true).solve(&grad, 1e-12).map_err(|_| IkError::NonFiniteJacobian)?
        } else {
            match normal.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => {
                    lambda *= cfg.damping_factor;
                    continue;
                }
            }
        };
        let offset = if root { 3 } else { 0 };
        let largest = (0..active.len())
            .map(|k| Vec3::new(delta[offset + 3 * k], delta[offset + 3 * k + 1], delta[offset + 3 * k + 2]).norm())
            .fold(0.0, f64::max);
        let delta = if largest > cfg.max_step { delta * (cfg.max_step / largest) } else { delta };
        let candidate = apply_step(skeleton, &pose, &active, &delta, root);
        let cand_world = forward_kinematics_full(skeleton, &candidate);
        let (cand_sq, cand_rms) = cost(&cand_world.positions, targets);
        if cfg.pure_gauss_newton || cand_sq < sq {
            let gain = rms - cand_rms;
            pose = candidate;
            world = cand_world;
            sq = cand_sq;
            rms = cand_rms;
            iterations += 1;
            lambda = (lambda / cfg.damping_factor).max(1e-12);
            if gain.abs() < cfg.tolerance || rms <= 1e-12 {
                converged = true;
            }
        } else {
            lambda *= cfg.damping_factor;
            if lambda > 1e12 {
                converged = true;
            }
        }
    }
    Ok(SolvedPose { pose, positions: world.positions, residual: rms, iterations, converged })
}

/// Solves every frame, warm-starting from the previous solution. Frame 0
/// starts from `initial` (the rest pose when `None`).
pub fn solve_sequence(
    skeleton: &Skeleton,
    targets: &[Vec<IkTarget>],
    initial: Option<&Pose>,
    cfg: &IkConfig,
) -> Result<Vec<SolvedPose>, IkError> {
    let mut out: Vec<SolvedPose> = Vec::with_capacity(targets.len());
    let mut start = initial.cloned().unwrap_or_else(|| skeleton.rest_pose());
    for (frame, t) in targets.iter().enumerate() {
        let solved = solve_frame(skeleton, t, &start, cfg).map_err(|e| IkError::Frame { frame, source: Box::new(e) })?;
        start = solved.pose.clone();
        out.push(solved);
    }
    Ok(out)
}

/// Momentum smoother: `v ← βv + (1−β)(x − s)`, `s ← s + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub s: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub beta: f64,
}

impl SmootherState {
    /// Starts at the first observation with zero velocity. `beta` must lie in [0, 1).
    pub fn new(first: &[Vec3], beta: f64) -> Result<SmootherState, IkError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(IkError::Config(format!("smoothing beta {beta} outside [0, 1)")));
        }
        Ok(SmootherState { s: first.to_vec(), v: vec![Vec3::zeros(); first.len()], beta })
    }

    pub fn step(&mut self, x: &[Vec3]) -> &[Vec3] {
        for ((s, v), x) in self.s.iter_mut().zip(self.v.iter_mut()).zip(x) {
            *v = self.beta * *v + (1.0 - self.beta) * (x - *s);
            *s += *v;
        }
        &self.s
    }
}

/// Smooths a whole stream; the first output equals the first input.
pub fn smooth_stream(stream: &[Vec<Vec3>], beta: f64) -> Result<Vec<Vec<Vec3>>, IkError> {
    let Some(first) = stream.first() else {
        return Ok(Vec::new());
    };
    let mut state = SmootherState::new(first, beta)?;
    let mut out = vec![first.clone()];
    for x in &stream[1..] {
        out.push(state.step(x).to_vec());
    }
    Ok(out)
}

pub const DEFAULT_ACCEL_THRESHOLD: f64 = 9.0;

/// Fraction of (joint, interior frame) pairs whose second central difference
/// exceeds `threshold` m/s² (strictly).
pub fn acceleration_metric(stream: &[Vec<Vec3>], fps: f64, threshold: f64) -> Result<f64, IkError> {
    if stream.len() < 3 {
        return Err(IkError::TooShort(stream.len()));
    }
    let fps2 = fps * fps;
    let mut count = 0usize;
    let mut total = 0usize;
    for t in 1..stream.len() - 1 {
        for j in 0..stream[t].len() {
            let a = (stream[t + 1][j] - 2.0 * stream[t][j] + stream[t - 1][j]).norm() * fps2;
            total += 1;
            if a > threshold {
                count += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { count as f64 / total as f64 })
}

/// Packs solved poses into a sequence for BVH export.
pub fn to_motion(skeleton: std::sync::Arc<Skeleton>, solved: &[SolvedPose], fps: f64) -> Result<MotionSequence, crate::skeleton::SkeletonError> {
    MotionSequence::new(skeleton, solved.iter().map(|s| s.pose.clone()).collect(), fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Channel, Joint};
    use approx::assert_relative_eq;

    fn arm() -> Skeleton {
        let rot = vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
        Skeleton::new(vec![
            Joint { name: "root".into(), parent: None, offset: Vec3::zeros(), channels: rot.clone() },
            Joint { name: "elbow".into(), parent: Some(0), offset: Vec3::x(), channels: rot },
            Joint { name: "end".into(), parent: Some(1), offset: Vec3::x(), channels: vec![] },
        ])
        .unwrap()
    }

    fn bent(elbow_deg: f64) -> Pose {
        let mut p = arm().rest_pose();
        p.rotations[1] = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), elbow_deg.to_radians());
        p
    }

    fn z_angle(q: &UnitQuaternion<f64>) -> f64 {
        let (axis, angle) = q.axis_angle().map(|(a, t)| (a.into_inner(), t)).unwrap_or((Vec3::z(), 0.0));
        assert!(axis.x.abs() < 1e-6 && axis.y.abs() < 1e-6);
        angle * axis.z.signum()
    }

    fn fixed_root() -> IkConfig {
        IkConfig { solve_root_translation: false, ..IkConfig::default() }
    }

    #[test]
    fn already_solved() {
        let skel = arm();
        let pose = bent(30.0);
        let world = forward_kinematics_full(&skel, &pose);
        let targets: Vec<IkTarget> = (0..3).map(|j| IkTarget { joint: j, position: world.positions[j], weight: 1.0 }).collect();
        let s = solve_frame(&skel, &targets, &pose, &IkConfig::default()).unwrap();
        assert_eq!((s.iterations, s.residual), (0, 0.0));
    }

    #[test]
    fn two_link_matches_closed_form() {
        let (x, y) = (1.2f64, 0.5f64);
        let c2 = (x * x + y * y - 2.0) / 2.0;
        let t2 = c2.acos();
        let t1 = y.atan2(x) - t2.sin().atan2(1.0 + c2);
        let target = [IkTarget { joint: 2, position: Vec3::new(x, y, 0.0), weight: 1.0 }];
        let s = solve_frame(&arm(), &target, &bent(20.0), &fixed_root()).unwrap();
        assert!(s.residual < 1e-9);
        assert!((z_angle(&s.pose.rotations[0]) - t1).abs() < 1e-4);
        assert!((z_angle(&s.pose.rotations[1]) - t2).abs() < 1e-4);
    }

    #[test]
    fn unreachable_target_extends_chain() {
        let target = [IkTarget { joint: 2, position: Vec3::new(0.0, 3.0, 0.0), weight: 1.0 }];
        let s = solve_frame(&arm(), &target, &bent(10.0), &fixed_root()).unwrap();
        assert!((s.residual - 1.0).abs() < 1e-3, "{}", s.residual);
        assert!((s.positions[2] - Vec3::new(0.0, 2.0, 0.0)).norm() < 0.05);
        assert_relative_eq!((s.positions[2] - s.positions[1]).norm(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn root_translation_flag() {
        let target = [IkTarget { joint: 0, position: Vec3::new(0.3, 0.0, 0.0), weight: 1.0 }];
        let s = solve_frame(&arm(), &target, &bent(0.0), &IkConfig::default()).unwrap();
        assert!(s.residual < 1e-9);
        let s = solve_frame(&arm(), &target, &bent(0.0), &fixed_root()).unwrap();
        assert!((s.residual - 0.3).abs() < 1e-12);
    }

    #[test]
    fn warm_start_helps() {
        let skel = arm();
        let stream: Vec<Vec<IkTarget>> = (0..10)
            .map(|t| {
                let a = 0.3 + 0.2 * (t as f64 * 0.3).sin();
                vec![IkTarget { joint: 2, position: Vec3::new(1.5 * a.cos(), 1.5 * a.sin(), 0.0), weight: 1.0 }]
            })
            .collect();
        let out = solve_sequence(&skel, &stream, Some(&bent(15.0)), &fixed_root()).unwrap();
        for s in &out[1..] {
            assert!(s.iterations < out[0].iterations, "{} vs {}", s.iterations, out[0].iterations);
        }
        let constant = vec![stream[0].clone(); 10];
        let out = solve_sequence(&skel, &constant, Some(&bent(15.0)), &fixed_root()).unwrap();
        for s in &out[1..] {
            assert_eq!(s.pose, out[1].pose);
        }
        assert!(solve_sequence(&skel, &[], None, &fixed_root()).unwrap().is_empty());
    }

    #[test]
    fn bad_inputs() {
        let skel = arm();
        assert_eq!(solve_frame(&skel, &[], &bent(0.0), &fixed_root()).unwrap_err(), IkError::NoTargets);
        let t = [IkTarget { joint: 2, position: Vec3::x(), weight: 0.0 }];
        assert_eq!(solve_frame(&skel, &t, &bent(0.0), &fixed_root()).unwrap_err(), IkError::BadTarget(0));
        let t = [IkTarget { joint: 2, position: Vec3::new(f64::NAN, 0.0, 0.0), weight: 1.0 }];
        let err = solve_sequence(&skel, &[t.to_vec()], None, &fixed_root()).unwrap_err();
        assert!(matches!(err, IkError::Frame { frame: 0, .. }));
    }

    fn scalar_stream(xs: &[f64]) -> Vec<Vec<Vec3>> {
        xs.iter().map(|x| vec![Vec3::new(*x, 0.0, 0.0)]).collect()
    }

    #[test]
    fn smoother_recurrence() {
        let mut input = vec![0.0];
        input.extend([1.0; 5]);
        let out = smooth_stream(&scalar_stream(&input), 0.8).unwrap();
        let expect = [0.2, 0.52, 0.872, 1.1792, 1.38912];
        for (o, e) in out[1..].iter().zip(expect) {
            assert!((o[0].x - e).abs() < 1e-12, "{} vs {e}", o[0].x);
        }
    }

    #[test]
    fn smoother_identity_and_fixed_point() {
        let xs = scalar_stream(&[0.3, -1.0, 2.5, 0.1]);
        for (a, b) in smooth_stream(&xs, 0.0).unwrap().iter().zip(&xs) {
            assert!((a[0] - b[0]).norm() < 1e-15);
        }
        let c = scalar_stream(&[0.7; 6]);
        let mut st = SmootherState::new(&c[0], 0.8).unwrap();
        for x in &c {
            assert_eq!(st.step(x)[0].x, 0.7);
            assert_eq!(st.v[0], Vec3::zeros());
        }
        assert!(SmootherState::new(&c[0], 1.0).is_err());
    }

    #[test]
    fn acceleration_examples() {
        let linear = scalar_stream(&[0.0, 0.1, 0.2, 0.3, 0.4]);
        assert_eq!(acceleration_metric(&linear, 30.0, 9.0).unwrap(), 0.0);
        let snap = scalar_stream(&[0.0, 0.0, 0.01, 0.01]);
        assert_eq!(acceleration_metric(&snap, 30.0, 9.0).unwrap(), 0.0);
        assert_eq!(acceleration_metric(&snap, 30.0, 8.999).unwrap(), 1.0);
        assert_eq!(acceleration_metric(&snap[..2], 30.0, 9.0).unwrap_err(), IkError::TooShort(2));
    }

    #[test]
    fn smoothing_reduces_discontinuity_acceleration() {
        let xs: Vec<f64> = (0..60).map(|t| if t < 30 { 0.0 } else { 0.05 }).collect();
        let raw = scalar_stream(&xs);
        let smooth = smooth_stream(&raw, 0.8).unwrap();
        assert!(acceleration_metric(&smooth, 30.0, 9.0).unwrap() < acceleration_metric(&raw, 30.0, 9.0).unwrap());
    }
}
