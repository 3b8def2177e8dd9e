//! Skeletal data model: joint hierarchy, poses, motion sequences, forward
//! kinematics and the head-local / wrist-local coordinate encodings.

mod bvh;
mod euler;
mod profile;

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bvh::{parse_bvh, parse_bvh_with_scale, write_bvh, BvhError, DEFAULT_UNIT_SCALE};
pub use euler::{euler_to_quat, quat_to_euler, Axis};
pub use profile::{
    GroupRule, GroupSpec, HandSpec, PrimitiveShapeSpec, PrimitiveSpec, ProfileError, ResolvedGroup, ResolvedHand,
    ResolvedProfile, SkeletonProfile,
};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// World up axis (right-handed, Y-up).
pub const WORLD_UP: Vec3 = Vector3::new(0.0, 1.0, 0.0);

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("skeleton has no joints")]
    Empty,
    #[error("joint {0} must be the single root")]
    RootCount(usize),
    #[error("joint {child} has parent {parent}, parents must precede children")]
    NotTopological { child: usize, parent: usize },
    #[error("joint `{0}` has a zero-length rest offset")]
    ZeroOffset(String),
    #[error("duplicate joint name `{0}`")]
    DuplicateName(String),
    #[error("pose has {got} rotations, skeleton has {expected} joints")]
    PoseSize { expected: usize, got: usize },
    #[error("frame rate must be positive, got {0}")]
    BadFps(f64),
    #[error("target fps {target} exceeds source fps {source_fps}")]
    UpsampleUnsupported { target: f64, source_fps: f64 },
    #[error("wrist frame is not orthonormal (error {0:e})")]
    NonOrthonormalFrame(f64),
}

/// BVH channel kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn parse(s: &str) -> Option<Channel> {
        Some(match s {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    pub fn rotation_axis(self) -> Option<Axis> {
        match self {
            Channel::Xrotation => Some(Axis::X),
            Channel::Yrotation => Some(Axis::Y),
            Channel::Zrotation => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn position_axis(self) -> Option<usize> {
        match self {
            Channel::Xposition => Some(0),
            Channel::Yposition => Some(1),
            Channel::Zposition => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, meters.
    pub offset: Vec3,
    /// Channels as declared in the source file. End sites have none.
    pub channels: Vec<Channel>,
}

impl Joint {
    pub fn is_end_site(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Validated joint hierarchy. Parents always precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    children: Vec<Vec<usize>>,
}

impl Serialize for Skeleton {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.joints.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Skeleton {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let joints = Vec::<Joint>::deserialize(d)?;
        Skeleton::new(joints).map_err(serde::de::Error::custom)
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self, SkeletonError> {
        if joints.is_empty() {
            return Err(SkeletonError::Empty);
        }
        let mut names = std::collections::HashSet::new();
        for (i, j) in joints.iter().enumerate() {
            if !names.insert(j.name.as_str()) {
                return Err(SkeletonError::DuplicateName(j.name.clone()));
            }
            match j.parent {
                None if i != 0 => return Err(SkeletonError::RootCount(i)),
                Some(_) if i == 0 => return Err(SkeletonError::RootCount(0)),
                Some(p) if p >= i => {
                    return Err(SkeletonError::NotTopological { child: i, parent: p })
                }
                Some(_) if !(j.offset.norm() > 0.0) => {
                    return Err(SkeletonError::ZeroOffset(j.name.clone()))
                }
                _ => {}
            }
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                children[p].push(i);
            }
        }
        Ok(Skeleton { joints, children })
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    /// ch(i): children of joint `i`.
    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Tree edges as (parent, child) pairs in child order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
    }

    /// True when `ancestor` lies on the path from `joint` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.joints[joint].parent {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    /// Joints on the path from `from` down to its descendant `to`, inclusive.
    pub fn chain(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut path = vec![to];
        let mut j = to;
        while j != from {
            j = self.joints[j].parent?;
            path.push(j);
        }
        path.reverse();
        Some(path)
    }

    pub fn rest_pose(&self) -> Pose {
        Pose {
            root_translation: self.joints[0].offset,
            rotations: vec![Quat::identity(); self.joints.len()],
        }
    }
}

/// Root translation plus one local rotation per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root_translation: Vec3,
    pub rotations: Vec<Quat>,
}

#[derive(Debug, Clone)]
pub struct MotionSequence {
    pub skeleton: Arc<Skeleton>,
    pub frames: Vec<Pose>,
    pub fps: f64,
}

impl MotionSequence {
    pub fn new(skeleton: Arc<Skeleton>, frames: Vec<Pose>, fps: f64) -> Result<Self, SkeletonError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(SkeletonError::BadFps(fps));
        }
        for f in &frames {
            if f.rotations.len() != skeleton.len() {
                return Err(SkeletonError::PoseSize { expected: skeleton.len(), got: f.rotations.len() });
            }
        }
        Ok(MotionSequence { skeleton, frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// FK for every frame.
    pub fn world_poses(&self) -> Vec<WorldPose> {
        self.frames
            .iter()
            .map(|p| forward_kinematics_full(&self.skeleton, p))
            .collect()
    }
}

/// World positions of every joint for one frame, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub frame: usize,
    pub positions: Vec<Vec3>,
}

/// FK output that also keeps global joint rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldPose {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
}

pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> JointPositions {
    JointPositions { frame: 0, positions: forward_kinematics_full(skeleton, pose).positions }
}

pub fn forward_kinematics_full(skeleton: &Skeleton, pose: &Pose) -> WorldPose {
    let n = skeleton.len();
    assert_eq!(pose.rotations.len(), n, "pose/skeleton joint count mismatch");
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Quat> = Vec::with_capacity(n);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        match joint.parent {
            None => {
                positions.push(pose.root_translation);
                rotations.push(pose.rotations[i]);
            }
            Some(p) => {
                let parent_rot = rotations[p];
                positions.push(positions[p] + parent_rot * joint.offset);
                rotations.push(parent_rot * pose.rotations[i]);
            }
        }
    }
    WorldPose { positions, rotations }
}

/// Decimates (integer stride) or nearest-frame samples `seq` to `target_fps`.
pub fn resample(seq: &MotionSequence, target_fps: f64) -> Result<MotionSequence, SkeletonError> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(SkeletonError::BadFps(target_fps));
    }
    if target_fps > seq.fps {
        return Err(SkeletonError::UpsampleUnsupported { target: target_fps, source_fps: seq.fps });
    }
    let ratio = seq.fps / target_fps;
    let indices: Vec<usize> = if (ratio - ratio.round()).abs() < 1e-9 {
        (0..seq.len()).step_by(ratio.round() as usize).collect()
    } else {
        let count = (seq.duration() * target_fps).floor() as usize;
        (0..count)
            .map(|k| ((k as f64 * ratio).round() as usize).min(seq.len().saturating_sub(1)))
            .collect()
    };
    let frames = indices.into_iter().map(|i| seq.frames[i].clone()).collect();
    MotionSequence::new(seq.skeleton.clone(), frames, target_fps)
}

/// Offsets every joint from the head location (translation only).
pub fn to_head_local(positions: &JointPositions, head_index: usize) -> JointPositions {
    let head = positions.positions[head_index];
    JointPositions {
        frame: positions.frame,
        positions: positions.positions.iter().map(|p| p - head).collect(),
    }
}

/// Head-local encoding with the head's yaw removed as well. Opt-in alternative to
/// [`to_head_local`].
pub fn to_head_yaw_local(positions: &JointPositions, head_index: usize, head_rotation: &Quat) -> JointPositions {
    let fwd = head_rotation * Vec3::z();
    let yaw = fwd.x.atan2(fwd.z);
    let inv = Rotation3::from_axis_angle(&Vector3::y_axis(), -yaw);
    let head = positions.positions[head_index];
    JointPositions {
        frame: positions.frame,
        positions: positions.positions.iter().map(|p| inv * (p - head)).collect(),
    }
}

/// Expresses `positions` in a wrist frame: `frameᵀ · (p − origin)`.
pub fn to_wrist_local(
    positions: &[Vec3],
    wrist_origin: &Vec3,
    wrist_frame: &Matrix3<f64>,
) -> Result<Vec<Vec3>, SkeletonError> {
    let err = orthonormality_error(wrist_frame);
    if err > 1e-6 {
        return Err(SkeletonError::NonOrthonormalFrame(err));
    }
    let inv = wrist_frame.transpose();
    Ok(positions.iter().map(|p| inv * (p - wrist_origin)).collect())
}

pub(crate) fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

/// Horizontal unit heading of a head with world rotation `head_rotation` and
/// local `forward`/`up` axes. Looking straight up or down falls back to the
/// up axis, which then points forward or backward.
pub fn heading(head_rotation: &Quat, forward: &Vec3, up: &Vec3) -> Vec3 {
    let horizontal = |v: Vec3| (v - WORLD_UP * v.dot(&WORLD_UP)).try_normalize(1e-6);
    let f = head_rotation * forward;
    horizontal(f)
        .or_else(|| horizontal(-(head_rotation * up) * f.dot(&WORLD_UP).signum()))
        .unwrap_or_else(Vec3::z)
}

/// Wrist frame built from the forearm bone and the head heading. Columns are
/// `[lateral, forward, up]`; forward is the elbow→wrist direction. For a
/// forearm pointing straight down, up is `heading`; any other forearm
/// direction takes the minimal rotation from straight down. The frame is
/// smooth in both arguments except for a forearm pointing straight up, and
/// rotates with the body about the vertical axis.
pub fn wrist_frame(elbow: &Vec3, wrist: &Vec3, heading: &Vec3) -> Matrix3<f64> {
    let down = -WORLD_UP;
    let forward = (wrist - elbow).try_normalize(1e-12).unwrap_or(down);
    let up0 = (heading - WORLD_UP * heading.dot(&WORLD_UP)).try_normalize(1e-12).unwrap_or_else(Vec3::z);
    let lateral0 = down.cross(&up0);
    let q = Quat::rotation_between(&down, &forward)
        .unwrap_or_else(|| Quat::from_axis_angle(&nalgebra::Unit::new_normalize(lateral0), std::f64::consts::PI));
    Matrix3::from_columns(&[q * lateral0, forward, q * up0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn chain(offsets: &[Vec3]) -> Skeleton {
        let joints = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| Joint {
                name: format!("j{i}"),
                parent: if i == 0 { None } else { Some(i - 1) },
                offset: *o,
                channels: vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation],
            })
            .collect();
        Skeleton::new(joints).unwrap()
    }

    #[test]
    fn invariants_rejected() {
        let j = |name: &str, parent, off: [f64; 3]| Joint {
            name: name.into(),
            parent,
            offset: Vec3::from(off),
            channels: vec![],
        };
        assert_eq!(Skeleton::new(vec![]), Err(SkeletonError::Empty));
        assert_eq!(
            Skeleton::new(vec![j("a", None, [0.; 3]), j("b", None, [1., 0., 0.])]),
            Err(SkeletonError::RootCount(1))
        );
        assert_eq!(
            Skeleton::new(vec![j("a", None, [0.; 3]), j("b", Some(0), [0.; 3])]),
            Err(SkeletonError::ZeroOffset("b".into()))
        );
        assert!(matches!(
            Skeleton::new(vec![j("a", None, [0.; 3]), j("b", Some(1), [1., 0., 0.])]),
            Err(SkeletonError::NotTopological { .. })
        ));
    }

    #[test]
    fn children_invert_parents() {
        let s = chain(&[Vec3::zeros(), Vec3::y(), Vec3::y()]);
        for i in 0..s.len() {
            for &c in s.children(i) {
                assert_eq!(s.parent(c), Some(i));
            }
        }
        assert_eq!(s.children(2), &[] as &[usize]);
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn fk_identity() {
        let s = chain(&[Vec3::zeros(), Vec3::y()]);
        let mut pose = s.rest_pose();
        pose.root_translation = Vec3::zeros();
        let p = forward_kinematics(&s, &pose);
        assert_relative_eq!(p.positions[1], Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn fk_root_rotated_about_z() {
        let s = chain(&[Vec3::zeros(), Vec3::x()]);
        let mut pose = s.rest_pose();
        pose.rotations[0] = Quat::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let p = forward_kinematics(&s, &pose);
        assert_relative_eq!(p.positions[1], Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn fk_three_joint_chain() {
        // Hand evaluation: j1 = Rz·(0,1,0) = (-1,0,0); j2 = j1 + Rz·Rx·(0,1,0).
        // Rx(90)·(0,1,0) = (0,0,1); Rz(90)·(0,0,1) = (0,0,1).
        let s = chain(&[Vec3::zeros(), Vec3::y(), Vec3::y()]);
        let mut pose = s.rest_pose();
        pose.rotations[0] = Quat::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        pose.rotations[1] = Quat::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2);
        let p = forward_kinematics(&s, &pose);
        assert_relative_eq!(p.positions[1], Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(p.positions[2], Vec3::new(-1.0, 0.0, 1.0), epsilon = 1e-15);
    }

    fn seq_with(n: usize, fps: f64) -> MotionSequence {
        let s = Arc::new(chain(&[Vec3::zeros(), Vec3::y()]));
        let frames = (0..n)
            .map(|i| Pose { root_translation: Vec3::new(i as f64, 0.0, 0.0), rotations: vec![Quat::identity(); 2] })
            .collect();
        MotionSequence::new(s, frames, fps).unwrap()
    }

    fn frame_ids(seq: &MotionSequence) -> Vec<usize> {
        seq.frames.iter().map(|f| f.root_translation.x as usize).collect()
    }

    #[test]
    fn resample_stride() {
        let out = resample(&seq_with(400, 120.0), 30.0).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(out.fps, 30.0);
        assert_eq!(frame_ids(&out)[..3], [0, 4, 8]);
    }

    #[test]
    fn resample_identity_and_non_integer_grid() {
        let seq = seq_with(9, 90.0);
        assert_eq!(frame_ids(&resample(&seq, 90.0).unwrap()), (0..9).collect::<Vec<_>>());
        assert_eq!(frame_ids(&resample(&seq, 30.0).unwrap()), vec![0, 3, 6]);
        // 100 → 30 fps: ratio 3.333..., nearest-frame grid.
        let out = resample(&seq_with(10, 100.0), 30.0).unwrap();
        assert_eq!(frame_ids(&out), vec![0, 3, 7]);
        assert!((out.duration() - 0.1).abs() <= 1.0 / 100.0 + 1e-12);
    }

    #[test]
    fn resample_rejects_upsampling() {
        assert!(matches!(resample(&seq_with(4, 30.0), 60.0), Err(SkeletonError::UpsampleUnsupported { .. })));
    }

    #[test]
    fn head_local_examples() {
        let jp = |v: Vec<Vec3>| JointPositions { frame: 0, positions: v };
        let out = to_head_local(&jp(vec![Vec3::new(1., 2., 3.), Vec3::new(1., 2., 3.)]), 0);
        assert_eq!(out.positions[1], Vec3::zeros());
        let out = to_head_local(&jp(vec![Vec3::new(0.1, 1.6, 0.0), Vec3::new(0.4, 1.1, 0.2)]), 0);
        assert_relative_eq!(out.positions[1], Vec3::new(0.3, -0.5, 0.2), epsilon = 1e-12);
        let input = jp(vec![Vec3::zeros(), Vec3::new(0.4, 1.1, 0.2)]);
        assert_eq!(to_head_local(&input, 0).positions, input.positions);
    }

    #[test]
    fn wrist_local_examples() {
        let pts = [Vec3::new(1.0, 0.0, 0.0)];
        let id = to_wrist_local(&pts, &Vec3::zeros(), &Matrix3::identity()).unwrap();
        assert_eq!(id[0], pts[0]);
        let rz = *Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2).matrix();
        let out = to_wrist_local(&pts, &Vec3::zeros(), &rz).unwrap();
        assert_relative_eq!(out[0], Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(to_wrist_local(&pts, &Vec3::zeros(), &bad), Err(SkeletonError::NonOrthonormalFrame(_))));
    }

    #[test]
    fn wrist_frame_is_right_handed() {
        let h = Vec3::z();
        for (e, w) in [
            (Vec3::new(0.3, 1.2, 0.0), Vec3::new(0.5, 1.1, 0.1)),
            (Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.7, 0.0)),
            (Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 1.3, 0.0)),
        ] {
            let m = wrist_frame(&e, &w, &h);
            assert!(orthonormality_error(&m) < 1e-12);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(m.column(1).into_owned(), (w - e).normalize(), epsilon = 1e-12);
        }
        let hanging = wrist_frame(&Vec3::new(0.0, 1.0, 0.0), &Vec3::new(0.0, 0.7, 0.0), &h);
        assert_relative_eq!(hanging.column(2).into_owned(), h, epsilon = 1e-12);
    }

    #[test]
    fn wrist_frame_is_continuous_around_a_hanging_forearm() {
        let h = Vec3::new(0.6, 0.0, 0.8);
        let base = wrist_frame(&Vec3::zeros(), &Vec3::new(0.0, -1.0, 0.0), &h);
        for k in 0..16 {
            let a = k as f64 / 16.0 * 2.0 * std::f64::consts::PI;
            let tilted = Vec3::new(1e-4 * a.cos(), -1.0, 1e-4 * a.sin());
            let m = wrist_frame(&Vec3::zeros(), &tilted, &h);
            assert!((m - base).abs().max() < 1e-3, "{k}");
        }
    }

    #[test]
    fn wrist_frame_follows_yaw() {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 1.1);
        let (e, w, h) = (Vec3::new(0.2, 1.3, 0.1), Vec3::new(0.1, 1.0, 0.3), Vec3::new(0.0, 0.0, 1.0));
        let m = wrist_frame(&e, &w, &h);
        let moved = wrist_frame(&(r * e), &(r * w), &(r * h));
        assert_relative_eq!(moved, r.matrix() * m, epsilon = 1e-12);
    }

    #[test]
    fn heading_is_horizontal() {
        let (f, u) = (Vec3::z(), Vec3::y());
        let level = Quat::from_axis_angle(&Vector3::y_axis(), 0.5);
        assert_relative_eq!(heading(&level, &f, &u), level * f, epsilon = 1e-12);
        let pitch = |deg: f64| level * Quat::from_axis_angle(&Vector3::x_axis(), deg.to_radians());
        for deg in [89.9999999, 90.0, -90.0, 45.0] {
            let h = heading(&pitch(deg), &f, &u);
            assert_relative_eq!(h, level * f, epsilon = 1e-6);
        }
    }
}
