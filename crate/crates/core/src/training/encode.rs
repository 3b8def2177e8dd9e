use std::sync::Arc;

use nalgebra::Matrix3;
use ndarray::{Array2, ArrayView1};

use super::TrainError;
use crate::model::{EncodingFrame, InputFeature, TaskLayout};
use crate::occlusion::OcclusionRecord;
use crate::skeleton::{forward_kinematics_full, heading, wrist_frame, MotionSequence, ResolvedProfile, Vec3, WorldPose};

/// Ground-truth reference frames of one frame, used to encode and decode positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    pub head: Vec3,
    /// Horizontal facing direction of the head.
    pub heading: Vec3,
    /// Origin and orthonormal frame per wrist (left, right).
    pub wrists: [(Vec3, Matrix3<f64>); 2],
}

impl FrameContext {
    pub fn new(world: &WorldPose, profile: &ResolvedProfile) -> FrameContext {
        let heading = heading(&world.rotations[profile.head], &profile.head_forward, &profile.head_up);
        let wrist = |s: usize| {
            let h = &profile.hands[s];
            let w = world.positions[h.wrist];
            (w, wrist_frame(&world.positions[h.elbow], &w, &heading))
        };
        FrameContext { head: world.positions[profile.head], heading, wrists: [wrist(0), wrist(1)] }
    }

    pub fn encode(&self, frame: EncodingFrame, p: &Vec3) -> Vec3 {
        match frame {
            EncodingFrame::Head => p - self.head,
            EncodingFrame::Wrist(s) => self.wrists[s].1.transpose() * (p - self.wrists[s].0),
        }
    }

    pub fn decode(&self, frame: EncodingFrame, local: &Vec3) -> Vec3 {
        match frame {
            EncodingFrame::Head => local + self.head,
            EncodingFrame::Wrist(s) => self.wrists[s].0 + self.wrists[s].1 * local,
        }
    }
}

/// One motion sequence in a task's encoding. Rows are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub id: String,
    pub fps: f64,
    /// Network inputs with the occlusion fill applied.
    pub inputs: Array2<f64>,
    /// Ground-truth encoded outputs.
    pub targets: Array2<f64>,
    /// Per tracked group, 1.0 when hidden.
    pub labels: Array2<f64>,
    /// Per output joint, true when its group is hidden.
    pub hidden: Array2<bool>,
    pub context: Vec<FrameContext>,
    /// Ground-truth world positions of the output joints.
    pub world: Vec<Vec<Vec3>>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_profile(layout: &TaskLayout, seq: &MotionSequence, profile: &ResolvedProfile) -> Result<(), TrainError> {
    if layout.profile != profile.profile.name {
        return Err(TrainError::ProfileMismatch(format!(
            "layout built for profile `{}`, got `{}`",
            layout.profile, profile.profile.name
        )));
    }
    let skel = &seq.skeleton;
    for o in &layout.outputs {
        if o.joint >= skel.len() || skel.joint(o.joint).name != o.name {
            return Err(TrainError::ProfileMismatch(format!("output joint `{}` not at index {}", o.name, o.joint)));
        }
    }
    let max_input = layout.inputs.iter().map(|f| match f {
        InputFeature::Position { joint, .. } | InputFeature::Height { joint } | InputFeature::Direction { joint, .. } => *joint,
    });
    if max_input.max().is_some_and(|j| j >= skel.len()) {
        return Err(TrainError::ProfileMismatch("input joint outside skeleton".into()));
    }
    if (seq.fps - layout.fps).abs() > 1e-9 {
        return Err(TrainError::FpsMismatch { sequence: seq.fps, model: layout.fps });
    }
    Ok(())
}

/// Encodes a sequence for `layout`. Without `records` every joint counts as visible.
///
/// Filled inputs of a hidden joint hold the last encoded value seen while it was
/// visible; a joint not yet seen holds its rest-pose encoding.
pub fn encode_sequence(
    id: &str,
    seq: &MotionSequence,
    records: Option<&[OcclusionRecord]>,
    layout: &TaskLayout,
    profile: &ResolvedProfile,
) -> Result<EncodedSequence, TrainError> {
    check_profile(layout, seq, profile)?;
    let n = seq.len();
    let skel = &seq.skeleton;
    if let Some(r) = records {
        if r.len() != n || r.iter().any(|rec| rec.mask.len() != skel.len()) {
            return Err(TrainError::RecordsMisaligned { frames: n, records: r.len() });
        }
    }
    let group_index: Vec<usize> = layout
        .groups
        .iter()
        .map(|g| {
            profile.groups.iter().position(|p| &p.name == g).ok_or_else(|| TrainError::ProfileMismatch(format!("group `{g}`")))
        })
        .collect::<Result<_, _>>()?;

    let rest = forward_kinematics_full(skel, &skel.rest_pose());
    let rest_ctx = FrameContext::new(&rest, profile);
    let mut last: Vec<Vec3> = layout
        .inputs
        .iter()
        .map(|f| match f {
            InputFeature::Position { joint, frame, .. } => rest_ctx.encode(*frame, &rest.positions[*joint]),
            _ => Vec3::zeros(),
        })
        .collect();

    let (ni, no, ng) = (layout.inputs.len(), layout.outputs.len(), layout.groups.len());
    let mut inputs = Array2::zeros((n, 3 * ni));
    let mut targets = Array2::zeros((n, 3 * no));
    let mut labels = Array2::zeros((n, ng));
    let mut hidden = Array2::from_elem((n, no), false);
    let mut context = Vec::with_capacity(n);
    let mut world_out = Vec::with_capacity(n);
    for (t, pose) in seq.frames.iter().enumerate() {
        let world = forward_kinematics_full(skel, pose);
        let ctx = FrameContext::new(&world, profile);
        let mask = records.map(|r| r[t].mask.as_slice());
        let is_hidden = |j: usize| mask.is_some_and(|m| m[j]);
        for (k, f) in layout.inputs.iter().enumerate() {
            let v = match f {
                InputFeature::Position { joint, frame, filled } => {
                    if !(*filled && is_hidden(*joint)) {
                        last[k] = ctx.encode(*frame, &world.positions[*joint]);
                    }
                    last[k]
                }
                InputFeature::Height { joint } => Vec3::new(0.0, world.positions[*joint].y, 0.0),
                InputFeature::Direction { joint, axis } => world.rotations[*joint] * Vec3::from(*axis),
            };
            for c in 0..3 {
                inputs[[t, 3 * k + c]] = v[c];
            }
        }
        for (k, o) in layout.outputs.iter().enumerate() {
            let v = ctx.encode(o.frame, &world.positions[o.joint]);
            for c in 0..3 {
                targets[[t, 3 * k + c]] = v[c];
            }
            hidden[[t, k]] = is_hidden(o.joint);
        }
        if let Some(r) = records {
            for (k, &g) in group_index.iter().enumerate() {
                labels[[t, k]] = if r[t].statuses[g].hidden() { 1.0 } else { 0.0 };
            }
        }
        world_out.push(layout.outputs.iter().map(|o| world.positions[o.joint]).collect());
        context.push(ctx);
    }
    Ok(EncodedSequence { id: id.to_string(), fps: seq.fps, inputs, targets, labels, hidden, context, world: world_out })
}

/// Encoded outputs of the skeleton's rest pose, the fill for never-seen joints.
pub fn rest_targets(layout: &TaskLayout, skeleton: &crate::skeleton::Skeleton, profile: &ResolvedProfile) -> Vec<f64> {
    let rest = forward_kinematics_full(skeleton, &skeleton.rest_pose());
    let ctx = FrameContext::new(&rest, profile);
    let world: Vec<Vec3> = layout.outputs.iter().map(|o| rest.positions[o.joint]).collect();
    encode_positions(layout, &ctx, &world)
}

/// `ctx` with each wrist frame rebuilt from predicted world positions of the
/// elbow and wrist, when the layout outputs both in head space.
fn predicted_context(layout: &TaskLayout, profile: &ResolvedProfile, ctx: &FrameContext, world: impl Fn(usize) -> Vec3) -> FrameContext {
    let head_slot = |joint: usize| layout.outputs.iter().position(|o| o.joint == joint && o.frame == EncodingFrame::Head);
    let mut out = ctx.clone();
    for s in 0..2 {
        let h = &profile.hands[s];
        if let (Some(e), Some(w)) = (head_slot(h.elbow), head_slot(h.wrist)) {
            let (e, w) = (world(e), world(w));
            out.wrists[s] = (w, wrist_frame(&e, &w, &ctx.heading));
        }
    }
    out
}

/// Maps an encoded output row back to world positions. Wrist-local slots use
/// the predicted wrist frame when available, otherwise the one in `ctx`.
pub fn decode_positions(layout: &TaskLayout, profile: &ResolvedProfile, ctx: &FrameContext, row: ArrayView1<f64>) -> Vec<Vec3> {
    let at = |k: usize| Vec3::new(row[3 * k], row[3 * k + 1], row[3 * k + 2]);
    let local = predicted_context(layout, profile, ctx, |k| ctx.decode(EncodingFrame::Head, &at(k)));
    layout.outputs.iter().enumerate().map(|(k, o)| local.decode(o.frame, &at(k))).collect()
}

/// Encodes predicted world positions of the output joints, expressing
/// wrist-local slots in the prediction's own wrist frame.
pub fn encode_prediction(layout: &TaskLayout, profile: &ResolvedProfile, ctx: &FrameContext, world: &[Vec3]) -> Vec<f64> {
    let local = predicted_context(layout, profile, ctx, |k| world[k]);
    encode_positions(layout, &local, world)
}

/// Re-encodes world positions of the output joints with the frames of `ctx`.
pub fn encode_positions(layout: &TaskLayout, ctx: &FrameContext, world: &[Vec3]) -> Vec<f64> {
    layout
        .outputs
        .iter()
        .zip(world)
        .flat_map(|(o, p)| {
            let v = ctx.encode(o.frame, p);
            [v.x, v.y, v.z]
        })
        .collect()
}

/// Windows of `window` frames ending at every `stride`-th frame from `window − 1`.
pub fn make_windows(seq: &Arc<EncodedSequence>, window: usize, stride: usize) -> Result<Vec<super::TrainingWindow>, TrainError> {
    if window == 0 || stride == 0 {
        return Err(TrainError::Config("window and stride must be positive".into()));
    }
    if seq.len() < window {
        return Err(TrainError::SequenceTooShort { frames: seq.len(), window });
    }
    Ok((window - 1..seq.len()).step_by(stride).map(|end| super::TrainingWindow { seq: seq.clone(), end, window }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;
    use crate::occlusion::Status;
    use ndarray::s;
    use crate::skeleton::{Skeleton, SkeletonProfile};
    use crate::synth::{generate_motion, humanoid_skeleton, SynthConfig};

    fn setup(task: Task) -> (Skeleton, ResolvedProfile, TaskLayout, MotionSequence) {
        let skel = humanoid_skeleton();
        let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
        let layout = TaskLayout::new(task, &skel, &profile, 27, 30.0);
        let seq = generate_motion(&SynthConfig { seed: 3, subject: 1, duration_s: 1.0, fps: 30.0 });
        (skel, profile, layout, seq)
    }

    fn visible_records(n: usize, joints: usize, groups: usize) -> Vec<OcclusionRecord> {
        (0..n).map(|frame| OcclusionRecord { frame, statuses: vec![Status::Visible; groups], mask: vec![false; joints] }).collect()
    }

    #[test]
    fn fully_visible_inputs_equal_targets() {
        let (skel, profile, layout, seq) = setup(Task::InsideOut);
        let recs = visible_records(seq.len(), skel.len(), profile.groups.len());
        let e = encode_sequence("a", &seq, Some(&recs), &layout, &profile).unwrap();
        assert_eq!(e.inputs, e.targets);
        assert!(e.labels.iter().all(|v| *v == 0.0));
        assert_eq!(encode_sequence("a", &seq, None, &layout, &profile).unwrap().inputs, e.inputs);
    }

    #[test]
    fn hidden_joint_holds_last_visible_value() {
        let (skel, profile, layout, seq) = setup(Task::InsideOut);
        let joint = skel.index_of("LeftForeArm").unwrap();
        let slot = layout.outputs.iter().position(|o| o.joint == joint).unwrap();
        let mut recs = visible_records(seq.len(), skel.len(), profile.groups.len());
        for r in &mut recs[10..=20] {
            r.mask[joint] = true;
        }
        let e = encode_sequence("a", &seq, Some(&recs), &layout, &profile).unwrap();
        let cols = 3 * slot..3 * slot + 3;
        for t in 10..=20 {
            assert_eq!(e.inputs.slice(s![t, cols.clone()]), e.targets.slice(s![9, cols.clone()]));
            assert!(e.hidden[[t, slot]]);
        }
        assert_eq!(e.inputs.slice(s![21, cols.clone()]), e.targets.slice(s![21, cols.clone()]));
        assert_ne!(e.targets.slice(s![20, cols.clone()]), e.targets.slice(s![9, cols]));
    }

    #[test]
    fn never_seen_joint_uses_rest_pose() {
        let (skel, profile, layout, seq) = setup(Task::InsideOut);
        let joint = skel.index_of("RightHandIndex2").unwrap();
        let slot = layout.outputs.iter().position(|o| o.joint == joint).unwrap();
        let mut recs = visible_records(seq.len(), skel.len(), profile.groups.len());
        for r in &mut recs[..5] {
            r.mask[joint] = true;
        }
        let e = encode_sequence("a", &seq, Some(&recs), &layout, &profile).unwrap();
        let rest = forward_kinematics_full(&skel, &skel.rest_pose());
        let ctx = FrameContext::new(&rest, &profile);
        let expect = ctx.encode(EncodingFrame::Wrist(1), &rest.positions[joint]);
        for t in 0..5 {
            for c in 0..3 {
                assert!((e.inputs[[t, 3 * slot + c]] - expect[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn task_widths_and_three_point_head() {
        let (_, profile, layout, seq) = setup(Task::ThreePoint);
        let e = encode_sequence("a", &seq, None, &layout, &profile).unwrap();
        assert_eq!((e.inputs.ncols(), e.targets.ncols()), (27, 27));
        assert_eq!((e.inputs[[0, 0]], e.inputs[[0, 2]]), (0.0, 0.0));
        assert!(e.inputs[[0, 1]] > 1.0);
        // Direction features are unit vectors.
        let n = (e.inputs[[0, 3]].powi(2) + e.inputs[[0, 4]].powi(2) + e.inputs[[0, 5]].powi(2)).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let (_, profile, layout, seq) = setup(Task::Finger);
        let e = encode_sequence("a", &seq, None, &layout, &profile).unwrap();
        assert_eq!((e.inputs.ncols(), e.targets.ncols()), (78, 126));
    }

    #[test]
    fn decode_inverts_encode() {
        let (_, profile, layout, seq) = setup(Task::InsideOut);
        let e = encode_sequence("a", &seq, None, &layout, &profile).unwrap();
        for t in [0, 17] {
            let back = decode_positions(&layout, &profile, &e.context[t], e.targets.row(t));
            for (a, b) in back.iter().zip(&e.world[t]) {
                assert!((a - b).norm() < 1e-12);
            }
            let again = encode_positions(&layout, &e.context[t], &back);
            for (a, b) in again.iter().zip(e.targets.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatches_rejected() {
        let (_, profile, layout, seq) = setup(Task::InsideOut);
        let recs = visible_records(3, 67, 14);
        assert!(matches!(encode_sequence("a", &seq, Some(&recs), &layout, &profile), Err(TrainError::RecordsMisaligned { .. })));
        let mut other = layout.clone();
        other.fps = 60.0;
        assert!(matches!(encode_sequence("a", &seq, None, &other, &profile), Err(TrainError::FpsMismatch { .. })));
        other = layout.clone();
        other.profile = "mixamo".into();
        assert!(matches!(encode_sequence("a", &seq, None, &other, &profile), Err(TrainError::ProfileMismatch(_))));
    }
}
