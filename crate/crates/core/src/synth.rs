//! Procedural humanoid motion with body and finger animation.
//!
//! Stands in for captured corpora when none are available: a fixed humanoid
//! rig (22 body joints, 16 finger joints per hand, end sites for head, toes and
//! fingertips) driven by a schedule of everyday activities (gesturing,
//! touching the face, crossing arms, hands behind the back, walking in place,
//! crouching, sitting, looking around). Motions are smooth by construction so
//! ground-truth accelerations stay low. Output is centimeter-authored BVH at
//! any frame rate.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::skeleton::{
    euler_to_quat, forward_kinematics_full, write_bvh, Axis, Channel, Joint, MotionSequence, Quat, Skeleton,
    Vec3, DEFAULT_UNIT_SCALE,
};

const ROT: [Channel; 3] = [Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
const ROOT_CHANNELS: [Channel; 6] = [
    Channel::Xposition,
    Channel::Yposition,
    Channel::Zposition,
    Channel::Zrotation,
    Channel::Xrotation,
    Channel::Yrotation,
];
const STAND_HEIGHT: f64 = 0.95;

struct Builder {
    joints: Vec<Joint>,
}

impl Builder {
    fn add(&mut self, name: &str, parent: &str, cm: [f64; 3]) {
        self.add_with(name, parent, cm, ROT.to_vec())
    }

    fn end(&mut self, parent: &str, cm: [f64; 3]) {
        self.add_with(&format!("{parent}_End"), parent, cm, Vec::new())
    }

    fn add_with(&mut self, name: &str, parent: &str, cm: [f64; 3], channels: Vec<Channel>) {
        let p = self.joints.iter().position(|j| j.name == parent).expect("parent defined first");
        self.joints.push(Joint {
            name: name.to_string(),
            parent: Some(p),
            offset: Vec3::from(cm) * DEFAULT_UNIT_SCALE,
            channels,
        });
    }
}

/// The synthetic humanoid in T-pose, facing +Z, Y up, left side on +X. Meters.
pub fn humanoid_skeleton() -> Skeleton {
    let mut b = Builder {
        joints: vec![Joint { name: "Hips".into(), parent: None, offset: Vec3::zeros(), channels: ROOT_CHANNELS.to_vec() }],
    };
    b.add("Spine", "Hips", [0.0, 10.0, 0.0]);
    b.add("Spine1", "Spine", [0.0, 12.0, 0.0]);
    b.add("Spine2", "Spine1", [0.0, 12.0, 0.0]);
    b.add("Neck", "Spine2", [0.0, 12.0, 0.0]);
    b.add("Head", "Neck", [0.0, 10.0, 6.0]);
    b.end("Head", [0.0, 18.0, 0.0]);
    for (p, s) in [("Left", 1.0), ("Right", -1.0)] {
        let n = |x: &str| format!("{p}{x}");
        b.add(&n("Shoulder"), "Spine2", [3.0 * s, 9.0, 0.0]);
        b.add(&n("Arm"), &n("Shoulder"), [15.0 * s, 0.0, 0.0]);
        b.add(&n("ForeArm"), &n("Arm"), [28.0 * s, 0.0, 0.0]);
        b.add(&n("Hand"), &n("ForeArm"), [25.0 * s, 0.0, 0.0]);
        let fingers: [(&str, [f64; 3], &[f64]); 5] = [
            ("Thumb", [2.0, -1.0, 3.0], &[3.5, 3.0, 2.5]),
            ("Index", [9.0, 0.0, 2.5], &[4.0, 2.5, 2.0]),
            ("Middle", [9.0, 0.0, 0.5], &[4.5, 3.0, 2.0]),
            ("Ring", [8.5, 0.0, -1.5], &[4.0, 2.5, 2.0]),
            ("Pinky", [3.5, 0.0, -2.5], &[4.5, 3.0, 2.0, 1.8]),
        ];
        for (finger, base, segments) in fingers {
            let first = if finger == "Pinky" { 0 } else { 1 };
            let mut parent = n("Hand");
            let mut offset = [base[0] * s, base[1], base[2]];
            for (k, len) in (first..).zip(segments.iter()) {
                let name = n(&format!("Hand{finger}{k}"));
                b.add(&name, &parent, offset);
                parent = name;
                offset = if finger == "Thumb" { [len * s * 0.8, 0.0, len * 0.6] } else { [len * s, 0.0, 0.0] };
                if finger == "Pinky" && k == 0 {
                    offset = [len * s, 0.0, -0.8];
                }
            }
            b.end(&parent, offset);
        }
    }
    for (p, s) in [("Left", 1.0), ("Right", -1.0)] {
        let n = |x: &str| format!("{p}{x}");
        b.add(&n("UpLeg"), "Hips", [9.0 * s, -6.0, 0.0]);
        b.add(&n("Leg"), &n("UpLeg"), [0.0, -42.0, 0.0]);
        b.add(&n("Foot"), &n("Leg"), [0.0, -40.0, 0.0]);
        b.add(&n("ToeBase"), &n("Foot"), [0.0, -5.0, 13.0]);
        b.end(&n("ToeBase"), [0.0, 0.0, 6.0]);
    }
    Skeleton::new(b.joints).expect("humanoid skeleton is valid")
}

#[derive(Debug, Clone, Copy)]
struct ArmParams {
    /// Wrist target in the chest frame, left-side coordinates.
    target: Vec3,
    /// Elbow hint direction in the chest frame, left-side coordinates.
    pole: Vec3,
    /// Oscillation amplitude of the target, meters per axis.
    wave: Vec3,
    wave_hz: f64,
    wrist_flex: f64,
    /// Finger curl in degrees for (thumb, index, middle, ring, pinky).
    curl: [f64; 5],
}

#[derive(Debug, Clone, Copy)]
struct Params {
    arms: [ArmParams; 2],
    hip_flex: f64,
    knee_flex: f64,
    walk_amp: f64,
    spine_bend: f64,
    head_pitch: f64,
    root_drop: f64,
}

fn lerp_v(a: Vec3, b: Vec3, w: f64) -> Vec3 {
    a * (1.0 - w) + b * w
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a * (1.0 - w) + b * w
}

impl ArmParams {
    fn blend(&self, o: &ArmParams, w: f64) -> ArmParams {
        let mut curl = [0.0; 5];
        for (k, c) in curl.iter_mut().enumerate() {
            *c = lerp(self.curl[k], o.curl[k], w);
        }
        ArmParams {
            target: lerp_v(self.target, o.target, w),
            pole: lerp_v(self.pole, o.pole, w),
            wave: lerp_v(self.wave, o.wave, w),
            wave_hz: lerp(self.wave_hz, o.wave_hz, w),
            wrist_flex: lerp(self.wrist_flex, o.wrist_flex, w),
            curl,
        }
    }
}

impl Params {
    /// Folds the periodic hand motion at time `t` into the arm targets, so
    /// blending two activities never blends their frequencies.
    fn at(&self, t: f64) -> Params {
        let mut p = *self;
        for a in &mut p.arms {
            let phase = TAU * a.wave_hz * t;
            a.target += Vec3::new(a.wave.x * phase.sin(), a.wave.y * (phase * 1.3 + 1.0).sin(), a.wave.z * (phase * 0.7 + 2.0).sin());
            a.wave = Vec3::zeros();
        }
        p
    }

    fn blend(&self, o: &Params, w: f64) -> Params {
        Params {
            arms: [self.arms[0].blend(&o.arms[0], w), self.arms[1].blend(&o.arms[1], w)],
            hip_flex: lerp(self.hip_flex, o.hip_flex, w),
            knee_flex: lerp(self.knee_flex, o.knee_flex, w),
            walk_amp: lerp(self.walk_amp, o.walk_amp, w),
            spine_bend: lerp(self.spine_bend, o.spine_bend, w),
            head_pitch: lerp(self.head_pitch, o.head_pitch, w),
            root_drop: lerp(self.root_drop, o.root_drop, w),
        }
    }
}

const RELAXED: [f64; 5] = [10.0, 15.0, 20.0, 25.0, 30.0];
const FIST: [f64; 5] = [40.0, 85.0, 90.0, 90.0, 85.0];
const POINT: [f64; 5] = [35.0, 5.0, 85.0, 90.0, 85.0];
const OPEN: [f64; 5] = [0.0, 0.0, 0.0, 0.0, 0.0];
const GRASP: [f64; 5] = [30.0, 45.0, 50.0, 55.0, 55.0];

fn arm(target: [f64; 3], pole: [f64; 3], curl: [f64; 5]) -> ArmParams {
    ArmParams {
        target: Vec3::from(target),
        pole: Vec3::from(pole),
        wave: Vec3::zeros(),
        wave_hz: 0.5,
        wrist_flex: 0.0,
        curl,
    }
}

fn hanging(rng: &mut ChaCha8Rng) -> ArmParams {
    let mut a = arm([0.24, -0.50, 0.06], [0.2, -0.2, -1.0], RELAXED);
    a.target += jitter(rng, 0.04);
    a
}

fn jitter(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn pick_shape(rng: &mut ChaCha8Rng) -> [f64; 5] {
    [RELAXED, FIST, POINT, OPEN, GRASP][rng.random_range(0..5)]
}

/// One arm's pose for an upper-body activity.
fn arm_activity(kind: usize, rng: &mut ChaCha8Rng) -> ArmParams {
    let mut a = match kind {
        0 => hanging(rng),
        // Gesturing in front of the chest.
        1 => {
            let mut a = arm([0.18, -0.12, 0.32], [0.5, -1.0, -0.3], pick_shape(rng));
            a.wave = Vec3::new(0.06, 0.06, 0.04);
            a.wave_hz = rng.random_range(0.35..0.7);
            a
        }
        // Hand on chin or cheek.
        2 => arm([0.05, 0.17, 0.13], [0.3, -1.0, 0.2], GRASP),
        // Arms crossed: wrist near the opposite upper arm.
        3 => arm([-0.14, -0.12, 0.14], [0.6, -1.0, 0.2], FIST),
        // Hand behind the back.
        4 => arm([0.10, -0.42, -0.18], [1.0, -0.3, 0.3], RELAXED),
        // Hand on hip.
        5 => arm([0.20, -0.36, -0.03], [1.0, -0.2, -0.6], GRASP),
        // Scratching the head or holding a phone to the ear.
        6 => {
            let mut a = arm([0.10, 0.36, -0.02], [1.0, -0.3, 0.2], GRASP);
            a.wave = Vec3::new(0.015, 0.015, 0.01);
            a.wave_hz = 1.0;
            a
        }
        // Reaching up and out.
        7 => arm([0.40, 0.45, 0.05], [0.2, -1.0, -0.5], OPEN),
        // Hands low in front, typing or holding something.
        _ => {
            let mut a = arm([0.14, -0.25, 0.34], [0.6, -1.0, -0.2], GRASP);
            a.wave = Vec3::new(0.02, 0.01, 0.02);
            a.wave_hz = 0.8;
            a
        }
    };
    a.target += jitter(rng, 0.03);
    a.wrist_flex = rng.random_range(-25.0..25.0);
    a
}

fn activity(rng: &mut ChaCha8Rng, style: &Style) -> Params {
    let legs = rng.random_range(0..10);
    let (hip_flex, knee_flex, walk_amp, root_drop, spine_bend) = match legs {
        0..=4 => (0.0, 0.0, 0.0, 0.0, rng.random_range(-5.0..10.0)),
        5 | 6 => (0.0, 0.0, 1.0, 0.0, 5.0),
        7 => {
            let t: f64 = rng.random_range(30.0..60.0);
            (t, 2.0 * t, 0.0, 0.82 * (1.0 - t.to_radians().cos()), t * 0.4)
        }
        _ => (88.0, 90.0, 0.0, 0.45, rng.random_range(0.0..15.0)),
    };
    let sym = rng.random_bool(0.35);
    let left_kind = rng.random_range(0..9);
    let mut left = arm_activity(left_kind, rng);
    let mut right = if sym || left_kind == 3 {
        let mut r = arm_activity(left_kind, rng);
        if left_kind == 3 {
            // The second arm sits above the first when crossing.
            r.target.y += 0.05;
            r.target.z += 0.03;
        }
        r
    } else {
        arm_activity(rng.random_range(0..9), rng)
    };
    if walk_amp > 0.0 {
        left = hanging(rng);
        right = hanging(rng);
    }
    for a in [&mut left, &mut right] {
        a.wave *= style.amplitude;
        a.wave_hz *= style.tempo;
    }
    Params {
        arms: [left, right],
        hip_flex,
        knee_flex,
        walk_amp,
        spine_bend: spine_bend + style.lean,
        head_pitch: rng.random_range(-25.0..10.0),
        root_drop,
    }
}

#[derive(Debug, Clone, Copy)]
struct Style {
    amplitude: f64,
    tempo: f64,
    lean: f64,
}

/// Slow smooth noise: a sum of a few low-frequency sinusoids.
struct Wander {
    terms: Vec<(f64, f64, f64)>,
}

impl Wander {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64, max_hz: f64) -> Self {
        let terms = (0..3)
            .map(|_| {
                (
                    amplitude * rng.random_range(0.3..1.0) / 2.0,
                    rng.random_range(0.02..max_hz),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        Wander { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub subject: u32,
    pub duration_s: f64,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 0, subject: 0, duration_s: 60.0, fps: 120.0 }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * x).cos()
}

/// Rotation whose columns are the given orthonormal axes.
fn frame(x: Vec3, y: Vec3, z: Vec3) -> Quat {
    Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])))
}

fn axis_rot(axis: Unit<Vector3<f64>>, deg: f64) -> Quat {
    Quat::from_axis_angle(&axis, deg.to_radians())
}

pub fn generate_motion(cfg: &SynthConfig) -> MotionSequence {
    let skeleton = Arc::new(humanoid_skeleton());
    let idx = |n: &str| skeleton.index_of(n).expect("humanoid joint");
    let mut style_rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + cfg.subject as u64);
    let style = Style {
        amplitude: style_rng.random_range(0.7..1.3),
        tempo: style_rng.random_range(0.8..1.2),
        lean: style_rng.random_range(-4.0..6.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((cfg.subject as u64) << 32));

    let transition = 2.0;
    let mut schedule: Vec<(f64, Params)> = Vec::new();
    let mut t = 0.0;
    while t < cfg.duration_s + 10.0 {
        schedule.push((t, activity(&mut rng, &style)));
        t += rng.random_range(4.0..9.0);
    }
    let yaw = Wander::new(&mut rng, 60.0, 0.05);
    let sway_x = Wander::new(&mut rng, 0.4, 0.05);
    let sway_z = Wander::new(&mut rng, 0.4, 0.05);
    let head_yaw = Wander::new(&mut rng, 70.0, 0.15);
    let head_pitch = Wander::new(&mut rng, 20.0, 0.15);
    let spine_twist = Wander::new(&mut rng, 20.0, 0.1);
    let finger_noise: Vec<Wander> = (0..10).map(|_| Wander::new(&mut rng, 12.0, 0.3)).collect();
    let walk_hz = 0.85 * style.tempo;

    let n_frames = (cfg.duration_s * cfg.fps).round() as usize;
    let arm_joints = ["Left", "Right"].map(|p| {
        (idx(&format!("{p}Arm")), idx(&format!("{p}ForeArm")), idx(&format!("{p}Hand")))
    });
    let upper = skeleton.joint(arm_joints[0].1).offset.norm();
    let lower = skeleton.joint(arm_joints[0].2).offset.norm();

    let mut frames = Vec::with_capacity(n_frames);
    let mut seg = 0;
    for f in 0..n_frames {
        let t = f as f64 / cfg.fps;
        while seg + 1 < schedule.len() && schedule[seg + 1].0 <= t {
            seg += 1;
        }
        let p = if seg + 1 < schedule.len() && schedule[seg + 1].0 - t < transition {
            let w = smoothstep(1.0 - (schedule[seg + 1].0 - t) / transition);
            schedule[seg].1.at(t).blend(&schedule[seg + 1].1.at(t), w)
        } else {
            schedule[seg].1.at(t)
        };

        let mut pose = skeleton.rest_pose();
        let phase = TAU * walk_hz * t;
        let bob = p.walk_amp * 0.015 * (2.0 * phase).cos();
        pose.root_translation = Vec3::new(sway_x.at(t), STAND_HEIGHT - p.root_drop - bob, sway_z.at(t));
        pose.rotations[0] = axis_rot(Vector3::y_axis(), yaw.at(t));
        let bend = p.spine_bend / 3.0;
        let twist = spine_twist.at(t) / 3.0;
        for name in ["Spine", "Spine1", "Spine2"] {
            pose.rotations[idx(name)] = axis_rot(Vector3::y_axis(), twist) * axis_rot(Vector3::x_axis(), bend);
        }
        let hp = p.head_pitch + head_pitch.at(t) - p.spine_bend * 0.5;
        let hy = head_yaw.at(t) - twist * 3.0;
        pose.rotations[idx("Neck")] = axis_rot(Vector3::y_axis(), hy * 0.4) * axis_rot(Vector3::x_axis(), -hp * 0.4);
        pose.rotations[idx("Head")] = axis_rot(Vector3::y_axis(), hy * 0.6) * axis_rot(Vector3::x_axis(), -hp * 0.6);

        for (side, sign) in [("Left", 1.0), ("Right", -1.0)] {
            let swing = p.walk_amp * 12.0 * (phase + if sign > 0.0 { 0.0 } else { PI }).sin();
            let knee = p.knee_flex + p.walk_amp * 20.0 * (0.5 + 0.5 * (phase + if sign > 0.0 { 0.0 } else { PI } - 1.2).sin());
            pose.rotations[idx(&format!("{side}UpLeg"))] = axis_rot(Vector3::x_axis(), -(p.hip_flex + swing));
            pose.rotations[idx(&format!("{side}Leg"))] = axis_rot(Vector3::x_axis(), knee);
            pose.rotations[idx(&format!("{side}Foot"))] = axis_rot(Vector3::x_axis(), -(knee - p.hip_flex - swing) * 0.5);
        }

        // Arms are placed against the trunk's FK.
        let world = forward_kinematics_full(&skeleton, &pose);
        let chest = idx("Spine2");
        let chest_rot = world.rotations[chest];
        let chest_pos = world.positions[chest];
        for (a, (sign, (j_arm, j_fore, j_hand))) in [1.0, -1.0].into_iter().zip(arm_joints).enumerate() {
            let ap = &p.arms[a];
            let mirror = |v: Vec3| Vec3::new(v.x * sign, v.y, v.z);
            let swing = p.walk_amp * 0.12 * (phase + if sign > 0.0 { PI } else { 0.0 }).sin();
            let local_target = mirror(ap.target) + Vec3::new(0.0, 0.0, swing);
            let target = chest_pos + chest_rot * local_target;
            let shoulder = world.positions[j_arm];
            let parent_rot = world.rotations[skeleton.parent(j_arm).unwrap()];
            let pole = chest_rot * mirror(ap.pole);

            let to_target = target - shoulder;
            let d = to_target.norm().clamp((upper - lower).abs() + 1e-3, upper + lower - 1e-3);
            let u = to_target.normalize();
            let v = (pole - u * u.dot(&pole)).try_normalize(1e-9).unwrap_or_else(|| {
                let alt = chest_rot * Vec3::new(0.0, -1.0, 0.0);
                (alt - u * u.dot(&alt)).normalize()
            });
            let cos_a = ((upper * upper + d * d - lower * lower) / (2.0 * upper * d)).clamp(-1.0, 1.0);
            let elbow = shoulder + (u * cos_a + v * (1.0 - cos_a * cos_a).sqrt()) * upper;
            let wrist = shoulder + u * d;
            let hinge = u.cross(&v);
            let bone_frame = |dir: Vec3| {
                let x = dir * sign;
                let z = (hinge - x * x.dot(&hinge)).normalize();
                frame(x, z.cross(&x), z)
            };
            let g_arm = bone_frame((elbow - shoulder).normalize());
            let g_fore = bone_frame((wrist - elbow).normalize());
            pose.rotations[j_arm] = parent_rot.inverse() * g_arm;
            pose.rotations[j_fore] = g_arm.inverse() * g_fore;
            pose.rotations[j_hand] = euler_to_quat(&[Axis::Z, Axis::Y], &[ap.wrist_flex * sign, 0.0]);

            let prefix = if sign > 0.0 { "Left" } else { "Right" };
            for (k, finger) in ["Thumb", "Index", "Middle", "Ring", "Pinky"].into_iter().enumerate() {
                let curl = (ap.curl[k] + finger_noise[a * 5 + k].at(t)).clamp(-5.0, 95.0);
                let first = if finger == "Pinky" { 0 } else { 1 };
                for seg_k in first..=3 {
                    let j = idx(&format!("{prefix}Hand{finger}{seg_k}"));
                    let share = if seg_k == 0 { 0.15 } else { [0.0, 0.45, 0.35, 0.25][seg_k] };
                    pose.rotations[j] = if finger == "Thumb" {
                        axis_rot(Vector3::x_axis(), curl * share) * axis_rot(Vector3::y_axis(), -curl * share * 0.5 * sign)
                    } else {
                        axis_rot(Vector3::z_axis(), -curl * share * 1.2 * sign)
                    };
                }
            }
        }
        frames.push(pose);
    }
    MotionSequence::new(skeleton, frames, cfg.fps).expect("synthetic sequence is valid")
}

pub fn generate_bvh(cfg: &SynthConfig) -> String {
    write_bvh(&generate_motion(cfg), DEFAULT_UNIT_SCALE).expect("humanoid channels are writable")
}

/// Descriptor of one generated corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    pub id: String,
    pub subject: String,
    pub config: SynthConfig,
}

/// Plans `subjects × per_subject` sequences of `duration_s` seconds each.
pub fn plan_corpus(seed: u64, subjects: u32, per_subject: u32, duration_s: f64, fps: f64) -> Vec<SynthEntry> {
    let mut out = Vec::new();
    for s in 0..subjects {
        for k in 0..per_subject {
            out.push(SynthEntry {
                id: format!("s{s:02}_take{k:02}"),
                subject: format!("s{s:02}"),
                config: SynthConfig { seed: seed.wrapping_mul(1000).wrapping_add((s * 100 + k) as u64), subject: s, duration_s, fps },
            });
        }
    }
    out
}
