//! Head-mounted camera visibility simulation over capsule and box body proxies.

mod geometry;
mod stats;

pub use geometry::{point_segment_distance, ray_hit, segment_distance_sq, shapes_overlap, Shape};
pub use stats::{
    corpus_occlusion_stats, decode_runs, detect_contacts, encode_runs, frame_contacts, occlusion_stats, records_to_csv, run_summary, ContactStats, GroupStats,
    OcclusionStats,
};

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{
    GroupRule, PrimitiveShapeSpec, ProfileError, Quat, ResolvedProfile, Skeleton, Vec3, WorldPose,
};

#[derive(Debug, Error, PartialEq)]
pub enum OcclusionError {
    #[error("no primitive covers `{0}`")]
    MissingProfileEntry(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("empty input")]
    EmptyInput,
    #[error("malformed run-length data: {0}")]
    MalformedRuns(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    /// Meters along head-forward from the head joint.
    pub nose_offset: f64,
    /// Degrees the optical axis is tilted below head-forward.
    pub pitch_down: f64,
    /// Full cone angle, degrees.
    pub fov: f64,
    /// Points closer than this (meters) are not observable.
    pub near_exclusion: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel { nose_offset: 0.04, pitch_down: 15.0, fov: 200.0, near_exclusion: 0.12 }
    }
}

impl CameraModel {
    /// Returns the offending field name and reason.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.fov > 0.0 && self.fov <= 360.0) {
            return Err(("fov", format!("must be in (0, 360], got {}", self.fov)));
        }
        if !(self.near_exclusion >= 0.0) || !self.near_exclusion.is_finite() {
            return Err(("near_exclusion", format!("must be ≥ 0, got {}", self.near_exclusion)));
        }
        if !self.nose_offset.is_finite() {
            return Err(("nose_offset", "must be finite".into()));
        }
        if !self.pitch_down.is_finite() {
            return Err(("pitch_down", "must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub origin: Vec3,
    pub forward: Vec3,
    pub half_fov: f64,
    pub near: f64,
}

/// Camera for a head with the default local axes (+Z forward, +Y up).
pub fn camera_from_head(head_position: &Vec3, head_orientation: &Quat, model: &CameraModel) -> Camera {
    camera_from_head_axes(head_position, head_orientation, &Vec3::z(), &Vec3::y(), model)
}

pub fn camera_from_head_axes(
    head_position: &Vec3,
    head_orientation: &Quat,
    local_forward: &Vec3,
    local_up: &Vec3,
    model: &CameraModel,
) -> Camera {
    let forward = head_orientation * local_forward.normalize();
    let lateral = head_orientation * local_up.cross(local_forward).normalize();
    let pitch = Rotation3::from_axis_angle(&Unit::new_normalize(lateral), model.pitch_down.to_radians());
    Camera {
        origin: head_position + forward * model.nose_offset,
        forward: (pitch * forward).normalize(),
        half_fov: (model.fov * 0.5).to_radians(),
        near: model.near_exclusion,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrustumStatus {
    Inside,
    OutOfView,
    TooClose,
}

/// The cone boundary counts as inside.
pub fn frustum_status(camera: &Camera, point: &Vec3) -> FrustumStatus {
    let d = point - camera.origin;
    if d.norm() < camera.near {
        return FrustumStatus::TooClose;
    }
    let angle = camera.forward.cross(&d).norm().atan2(camera.forward.dot(&d));
    if angle > camera.half_fov {
        FrustumStatus::OutOfView
    } else {
        FrustumStatus::Inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Visible,
    Occluded,
    OutOfView,
    TooClose,
}

impl Status {
    pub const ALL: [Status; 4] = [Status::Visible, Status::Occluded, Status::OutOfView, Status::TooClose];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Visible => "visible",
            Status::Occluded => "occluded",
            Status::OutOfView => "out-of-view",
            Status::TooClose => "too-close",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Status> {
        Status::ALL.get(c as usize).copied()
    }

    /// Occlusion label: anything the camera cannot confirm.
    pub fn hidden(self) -> bool {
        self != Status::Visible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionRecord {
    pub frame: usize,
    /// One status per profile group, in profile order.
    pub statuses: Vec<Status>,
    /// Per skeleton joint: true when the joint's group is not visible.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateShape {
    Capsule { radius: f64 },
    Box { half_width: f64, half_depth: f64, pad: f64, width_axis: Vec3 },
}

/// A primitive attached to a bone chain, posed per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveTemplate {
    pub name: String,
    pub from: usize,
    pub to: usize,
    /// Joints from `from` down to `to`, inclusive.
    pub chain: Vec<usize>,
    pub shape: TemplateShape,
    /// Group index this primitive counts toward under the hand rule.
    pub group: Option<usize>,
    pub contact_set: Option<String>,
    /// Direction `from`→`to` in the `from` joint's frame at rest.
    rest_dir: Vec3,
}

/// Body proxies plus the precomputed visibility bookkeeping for one profile.
#[derive(Debug, Clone)]
pub struct OcclusionRig {
    pub primitives: Vec<PrimitiveTemplate>,
    pub groups: Vec<crate::skeleton::ResolvedGroup>,
    pub head: usize,
    pub head_forward: Vec3,
    pub head_up: Vec3,
    pub model: CameraModel,
    /// Per joint: primitives whose chain contains it.
    pub attached: Vec<Vec<bool>>,
    /// Per primitive: itself and primitives sharing a joint with it.
    pub neighbors: Vec<Vec<bool>>,
    /// Per group: hand-rule primitives.
    pub group_primitives: Vec<Vec<usize>>,
    /// Per joint: owning group, inherited from the nearest grouped ancestor.
    pub joint_group: Vec<Option<usize>>,
    /// Pairs excluded from contact detection.
    pub contact_exempt: Vec<Vec<bool>>,
    pub hand_group: Vec<bool>,
}

/// Builds the body proxies for `skeleton` from the profile's primitive table.
pub fn build_primitives(skeleton: &Skeleton, profile: &ResolvedProfile) -> Result<Vec<PrimitiveTemplate>, OcclusionError> {
    if profile.profile.primitives.is_empty() {
        return Err(OcclusionError::MissingProfileEntry("any bone".into()));
    }
    let rest = crate::skeleton::forward_kinematics_full(skeleton, &skeleton.rest_pose());
    let mut out = Vec::with_capacity(profile.profile.primitives.len());
    for spec in &profile.profile.primitives {
        let idx = |n: &str| skeleton.index_of(n).ok_or_else(|| ProfileError::UnknownJoint(n.to_string()));
        let (from, to) = (idx(&spec.from)?, idx(&spec.to)?);
        let mut chain = skeleton.chain(from, to).ok_or_else(|| ProfileError::NotAChain {
            name: spec.name.clone(),
            from: spec.from.clone(),
            to: spec.to.clone(),
        })?;
        chain.sort_unstable();
        let rest_vec = rest.positions[to] - rest.positions[from];
        let length = rest_vec.norm();
        let rest_dir = rest.rotations[from].inverse() * rest_vec.try_normalize(1e-12).unwrap_or_else(Vec3::y);
        let shape = match &spec.shape {
            PrimitiveShapeSpec::Capsule { radius } => TemplateShape::Capsule { radius: *radius },
            PrimitiveShapeSpec::ScaledCapsule { length_ratio, min_radius, max_radius } => {
                TemplateShape::Capsule { radius: (length_ratio * length).clamp(*min_radius, *max_radius) }
            }
            PrimitiveShapeSpec::Box { half_width, half_depth, pad, width_axis } => TemplateShape::Box {
                half_width: *half_width,
                half_depth: *half_depth,
                pad: *pad,
                width_axis: Vec3::from(*width_axis),
            },
        };
        match shape {
            TemplateShape::Capsule { radius } if !(radius > 0.0) => {
                return Err(OcclusionError::InvalidPrimitive(format!("{}: radius {radius}", spec.name)))
            }
            TemplateShape::Box { half_width, half_depth, pad, .. }
                if !(half_width > 0.0 && half_depth > 0.0 && pad >= 0.0) =>
            {
                return Err(OcclusionError::InvalidPrimitive(format!("{}: box dimensions", spec.name)))
            }
            _ => {}
        }
        let group = spec.group.as_ref().and_then(|g| profile.groups.iter().position(|x| &x.name == g));
        out.push(PrimitiveTemplate {
            name: spec.name.clone(),
            from,
            to,
            chain,
            shape,
            group,
            contact_set: spec.contact_set.clone(),
            rest_dir,
        });
    }
    Ok(out)
}

impl PrimitiveTemplate {
    /// World-space shape for one frame.
    pub fn pose(&self, world: &WorldPose) -> Shape {
        let a = world.positions[self.from];
        let b = world.positions[self.to];
        match &self.shape {
            TemplateShape::Capsule { radius } => Shape::Capsule { a, b, radius: *radius },
            TemplateShape::Box { half_width, half_depth, pad, width_axis } => {
                let g = world.rotations[self.from];
                let length = (b - a).norm();
                let y = (b - a).try_normalize(1e-12).unwrap_or_else(|| g * self.rest_dir);
                let w = g * width_axis;
                let x = (w - y * y.dot(&w))
                    .try_normalize(1e-9)
                    .unwrap_or_else(|| {
                        let alt = g * Vec3::z();
                        (alt - y * y.dot(&alt)).normalize()
                    });
                let z = x.cross(&y);
                Shape::Cuboid {
                    center: (a + b) * 0.5,
                    half: Vec3::new(*half_width, length * 0.5 + pad, *half_depth),
                    axes: Matrix3::from_columns(&[x, y, z]),
                }
            }
        }
    }
}

/// Chains touch, meet parent-to-child, or leave a common parent.
fn chains_adjacent(skeleton: &Skeleton, a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|&x| {
        b.iter().any(|&y| {
            x == y
                || skeleton.parent(x) == Some(y)
                || skeleton.parent(y) == Some(x)
                || (skeleton.parent(x).is_some() && skeleton.parent(x) == skeleton.parent(y))
        })
    })
}

impl OcclusionRig {
    pub fn new(skeleton: &Skeleton, profile: &ResolvedProfile, model: CameraModel) -> Result<Self, OcclusionError> {
        model.validate().map_err(|(f, m)| OcclusionError::InvalidCamera(format!("{f}: {m}")))?;
        let primitives = build_primitives(skeleton, profile)?;
        let n = primitives.len();
        let attached: Vec<Vec<bool>> = (0..skeleton.len())
            .map(|j| primitives.iter().map(|p| p.chain.contains(&j)).collect())
            .collect();
        let shares = |a: &PrimitiveTemplate, b: &PrimitiveTemplate| a.chain.iter().any(|j| b.chain.contains(j));
        let neighbors: Vec<Vec<bool>> =
            primitives.iter().map(|p| primitives.iter().map(|q| shares(p, q)).collect()).collect();
        let contact_exempt = primitives
            .iter()
            .map(|p| {
                primitives
                    .iter()
                    .map(|q| {
                        chains_adjacent(skeleton, &p.chain, &q.chain)
                            || (p.contact_set.is_some() && p.contact_set == q.contact_set)
                    })
                    .collect()
            })
            .collect();
        let mut group_primitives = vec![Vec::new(); profile.groups.len()];
        for (i, p) in primitives.iter().enumerate() {
            if let Some(g) = p.group {
                group_primitives[g].push(i);
            }
        }
        for (gi, g) in profile.groups.iter().enumerate() {
            match g.rule {
                GroupRule::Always => {}
                GroupRule::Standard => {
                    for &probe in &g.probes {
                        if !attached[probe].iter().any(|x| *x) {
                            return Err(OcclusionError::MissingProfileEntry(skeleton.joint(probe).name.clone()));
                        }
                    }
                }
                GroupRule::Hand { .. } => {
                    if group_primitives[gi].is_empty() {
                        return Err(OcclusionError::MissingProfileEntry(g.name.clone()));
                    }
                }
            }
        }
        let mut joint_group = profile.joint_group.clone();
        for j in 0..skeleton.len() {
            if joint_group[j].is_none() {
                joint_group[j] = skeleton.parent(j).and_then(|p| joint_group[p]);
            }
        }
        let hand_group = primitives
            .iter()
            .map(|p| p.group.is_some_and(|g| matches!(profile.groups[g].rule, GroupRule::Hand { .. })))
            .collect();
        debug_assert_eq!(neighbors.len(), n);
        Ok(OcclusionRig {
            primitives,
            groups: profile.groups.clone(),
            head: profile.head,
            head_forward: profile.head_forward,
            head_up: profile.head_up,
            model,
            attached,
            neighbors,
            group_primitives,
            joint_group,
            contact_exempt,
            hand_group,
        })
    }

    pub fn pose(&self, world: &WorldPose) -> Vec<Shape> {
        self.primitives.iter().map(|p| p.pose(world)).collect()
    }

    pub fn camera(&self, world: &WorldPose) -> Camera {
        camera_from_head_axes(
            &world.positions[self.head],
            &world.rotations[self.head],
            &self.head_forward,
            &self.head_up,
            &self.model,
        )
    }

    /// Indices of groups that can be hidden.
    pub fn tracked_groups(&self) -> Vec<usize> {
        (0..self.groups.len()).filter(|&g| self.groups[g].rule != GroupRule::Always).collect()
    }

    pub fn simulate(&self, frame: usize, world: &WorldPose) -> OcclusionRecord {
        simulate_frame(frame, &self.camera(world), &self.pose(world), &world.positions, self)
    }

    /// Rebuilds a record, including the per-joint mask, from group statuses.
    pub fn record(&self, frame: usize, statuses: Vec<Status>) -> OcclusionRecord {
        let mask = self.joint_group.iter().map(|g| g.is_some_and(|g| statuses[g].hidden())).collect();
        OcclusionRecord { frame, statuses, mask }
    }

    pub fn simulate_sequence(&self, seq: &crate::skeleton::MotionSequence) -> Vec<OcclusionRecord> {
        seq.world_poses().iter().enumerate().map(|(f, w)| self.simulate(f, w)).collect()
    }
}

/// True when the segment camera→`target` crosses a primitive not in `exclude`.
pub fn ray_blocked(camera: &Camera, target: &Vec3, shapes: &[Shape], exclude: &[bool]) -> bool {
    let d = target - camera.origin;
    let dist = d.norm();
    if dist < 1e-12 {
        return false;
    }
    let dir = d / dist;
    shapes
        .iter()
        .zip(exclude)
        .any(|(s, ex)| !ex && ray_hit(s, &camera.origin, &dir, dist).is_some())
}

/// In the cone and unobstructed by any primitive outside `exclude`.
pub fn point_visible(camera: &Camera, point: &Vec3, shapes: &[Shape], exclude: &[bool]) -> bool {
    frustum_status(camera, point) == FrustumStatus::Inside && !ray_blocked(camera, point, shapes, exclude)
}

/// Hand rule: the share of visible primitives meets `threshold`.
pub fn hand_rule(visible: usize, total: usize, threshold: f64) -> bool {
    total > 0 && visible as f64 >= threshold * total as f64 - 1e-12
}

fn any_sample_visible(camera: &Camera, shape: &Shape, shapes: &[Shape], exclude: &[bool]) -> bool {
    shape.sample_points().iter().any(|p| point_visible(camera, p, shapes, exclude))
}

/// Group statuses for one posed frame.
pub fn simulate_frame(
    frame: usize,
    camera: &Camera,
    shapes: &[Shape],
    positions: &[Vec3],
    rig: &OcclusionRig,
) -> OcclusionRecord {
    let statuses: Vec<Status> = rig
        .groups
        .iter()
        .enumerate()
        .map(|(gi, g)| match g.rule {
            GroupRule::Always => Status::Visible,
            GroupRule::Standard => {
                let fs: Vec<FrustumStatus> = g.probes.iter().map(|&p| frustum_status(camera, &positions[p])).collect();
                let visible = g.probes.iter().zip(&fs).any(|(&p, s)| {
                    let exclude = &rig.attached[p];
                    *s == FrustumStatus::Inside
                        && !ray_blocked(camera, &positions[p], shapes, exclude)
                        && shapes
                            .iter()
                            .zip(exclude)
                            .any(|(shape, att)| *att && any_sample_visible(camera, shape, shapes, exclude))
                });
                if visible {
                    Status::Visible
                } else if fs.contains(&FrustumStatus::Inside) {
                    Status::Occluded
                } else if fs.contains(&FrustumStatus::OutOfView) {
                    Status::OutOfView
                } else {
                    Status::TooClose
                }
            }
            GroupRule::Hand { threshold } => match frustum_status(camera, &positions[g.probes[0]]) {
                FrustumStatus::TooClose => Status::TooClose,
                FrustumStatus::OutOfView => Status::OutOfView,
                FrustumStatus::Inside => {
                    let prims = &rig.group_primitives[gi];
                    let visible = prims
                        .iter()
                        .filter(|&&i| any_sample_visible(camera, &shapes[i], shapes, &rig.neighbors[i]))
                        .count();
                    if hand_rule(visible, prims.len(), threshold) {
                        Status::Visible
                    } else {
                        Status::Occluded
                    }
                }
            },
        })
        .collect();
    rig.record(frame, statuses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{forward_kinematics_full, SkeletonProfile};
    use crate::synth::humanoid_skeleton;

    fn rig() -> (Skeleton, OcclusionRig) {
        let skel = humanoid_skeleton();
        let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
        let rig = OcclusionRig::new(&skel, &profile, CameraModel::default()).unwrap();
        (skel, rig)
    }

    #[test]
    fn camera_default_head() {
        let c = camera_from_head(&Vec3::zeros(), &Quat::identity(), &CameraModel::default());
        assert!((c.origin - Vec3::new(0.0, 0.0, 0.04)).norm() < 1e-15);
        let a = 15f64.to_radians();
        assert!((c.forward - Vec3::new(0.0, -a.sin(), a.cos())).norm() < 1e-15);
    }

    #[test]
    fn camera_identity_configuration() {
        let m = CameraModel { nose_offset: 0.0, pitch_down: 0.0, ..CameraModel::default() };
        let c = camera_from_head(&Vec3::new(1.0, 2.0, 3.0), &Quat::identity(), &m);
        assert_eq!(c.origin, Vec3::new(1.0, 2.0, 3.0));
        assert!((c.forward - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn camera_facing_negative_x() {
        let q = Quat::from_axis_angle(&Vec3::y_axis(), -std::f64::consts::FRAC_PI_2);
        let c = camera_from_head(&Vec3::zeros(), &q, &CameraModel::default());
        let expected_forward = q * Vec3::z();
        assert!((expected_forward - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((c.origin - expected_forward * 0.04).norm() < 1e-15);
        assert!(c.forward.x < 0.0 && c.forward.y < 0.0);
    }

    #[test]
    fn frustum_examples() {
        let c = camera_from_head(&Vec3::zeros(), &Quat::identity(), &CameraModel { pitch_down: 0.0, ..Default::default() });
        assert_eq!(frustum_status(&c, &(c.origin + Vec3::z())), FrustumStatus::Inside);
        assert_eq!(frustum_status(&c, &(c.origin + Vec3::x() * 0.10)), FrustumStatus::TooClose);
        let off = |deg: f64| c.origin + Vec3::new(deg.to_radians().sin(), 0.0, deg.to_radians().cos());
        assert_eq!(frustum_status(&c, &off(101.0)), FrustumStatus::OutOfView);
        assert_eq!(frustum_status(&c, &off(99.0)), FrustumStatus::Inside);
    }

    #[test]
    fn camera_model_validation() {
        assert!(CameraModel { fov: -5.0, ..Default::default() }.validate().is_err());
        assert!(CameraModel { fov: 360.0, ..Default::default() }.validate().is_ok());
        assert!(CameraModel { near_exclusion: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn hand_rule_threshold() {
        assert!(hand_rule(7, 10, 0.65));
        assert!(!hand_rule(6, 10, 0.65));
        assert!(hand_rule(13, 20, 0.65));
        assert!(!hand_rule(0, 0, 0.65));
    }

    #[test]
    fn empty_profile_is_missing_entry() {
        let skel = humanoid_skeleton();
        let mut p = SkeletonProfile::humanoid();
        p.primitives.clear();
        let r = p.resolve(&skel).unwrap();
        assert_eq!(
            build_primitives(&skel, &r).unwrap_err(),
            OcclusionError::MissingProfileEntry("any bone".into())
        );
    }

    #[test]
    fn forearm_capsule_follows_joints() {
        let (skel, rig) = rig();
        let i = rig.primitives.iter().position(|p| p.name == "l_forearm").unwrap();
        let world = forward_kinematics_full(&skel, &skel.rest_pose());
        match rig.primitives[i].pose(&world) {
            Shape::Capsule { a, b, radius } => {
                assert_eq!(radius, 0.04);
                assert_eq!(a, world.positions[skel.index_of("LeftForeArm").unwrap()]);
                assert_eq!(b, world.positions[skel.index_of("LeftHand").unwrap()]);
            }
            _ => panic!("forearm should be a capsule"),
        }
    }

    #[test]
    fn rest_pose_statuses() {
        let (skel, rig) = rig();
        let world = forward_kinematics_full(&skel, &skel.rest_pose());
        let rec = rig.simulate(0, &world);
        let status = |name: &str| rec.statuses[rig.groups.iter().position(|g| g.name == name).unwrap()];
        assert_eq!(status("head"), Status::Visible);
        assert_eq!(status("torso"), Status::Visible);
        assert_eq!(status("l_elbow"), Status::Visible);
        assert_eq!(status("r_foot"), Status::Visible);
        // Arm joints sit behind the camera plane.
        assert_eq!(status("l_shoulder"), Status::OutOfView);
        // The outstretched forearm hides the fingers at a grazing angle.
        assert_eq!(status("l_hand"), Status::Occluded);
        assert_eq!(status("l_hip"), Status::Occluded);
        assert!(rec.mask[skel.index_of("LeftUpLeg").unwrap()]);
        assert!(rec.mask[skel.index_of("LeftHandIndex2").unwrap()]);
        assert!(!rec.mask[skel.index_of("LeftForeArm").unwrap()]);
        // End sites follow their parent's group.
        assert!(!rec.mask[skel.index_of("LeftToeBase_End").unwrap()]);
    }

    #[test]
    fn t_pose_has_no_contacts() {
        let (skel, rig) = rig();
        let world = forward_kinematics_full(&skel, &skel.rest_pose());
        assert_eq!(frame_contacts(&rig.pose(&world), &rig, 0.0), (false, false));
    }

    #[test]
    fn simulation_is_deterministic() {
        let (skel, rig) = rig();
        let world = forward_kinematics_full(&skel, &skel.rest_pose());
        assert_eq!(rig.simulate(3, &world), rig.simulate(3, &world));
    }
}
