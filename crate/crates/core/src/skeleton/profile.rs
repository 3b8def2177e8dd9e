//! Skeleton profiles: landmark names, joint groups and body-proxy dimensions
//! for one corpus naming convention. Profiles are plain JSON.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Skeleton, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile names joint `{0}`, which the skeleton does not have")]
    UnknownJoint(String),
    #[error("joint `{0}` belongs to no group")]
    Ungrouped(String),
    #[error("joint `{joint}` belongs to both `{first}` and `{second}`")]
    DoubleGrouped { joint: String, first: String, second: String },
    #[error("primitive `{name}`: `{to}` is not a descendant of `{from}`")]
    NotAChain { name: String, from: String, to: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
}

/// Visibility rule for a joint group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupRule {
    /// Never occluded (the head carries the camera).
    Always,
    /// Visible when any probe joint is in view, unblocked, and one of its
    /// attached primitives shows at least one sample point.
    Standard,
    /// Visible when at least `threshold` of the group's primitives are visible.
    Hand { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Coarse category used for aggregated statistics ("shoulder", "hand", ...).
    pub kind: String,
    pub rule: GroupRule,
    /// Joints whose occlusion mask follows this group.
    pub members: Vec<String>,
    /// Joints tested for visibility. For hands, the first probe is the anchor
    /// used for frustum overrides.
    #[serde(default)]
    pub probes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveShapeSpec {
    Capsule { radius: f64 },
    /// Radius proportional to rest bone length, clamped.
    ScaledCapsule { length_ratio: f64, min_radius: f64, max_radius: f64 },
    /// Oriented box spanning `from`→`to`. `width_axis` is expressed in the
    /// `from` joint's local frame and orthogonalized against the bone axis.
    Box { half_width: f64, half_depth: f64, pad: f64, #[serde(default = "default_width_axis")] width_axis: [f64; 3] },
}

fn default_width_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSpec {
    pub name: String,
    pub from: String,
    pub to: String,
    pub shape: PrimitiveShapeSpec,
    /// Group this primitive counts toward for the hand rule.
    #[serde(default)]
    pub group: Option<String>,
    /// Primitives sharing a contact set never register contacts with each other.
    #[serde(default)]
    pub contact_set: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSpec {
    pub wrist: String,
    pub elbow: String,
    pub fingers: Vec<String>,
    pub fingertips: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonProfile {
    pub name: String,
    pub head: String,
    /// Head-local axes of the facing direction and of "up".
    #[serde(default = "default_forward")]
    pub head_forward: [f64; 3],
    #[serde(default = "default_up")]
    pub head_up: [f64; 3],
    pub left_hand: HandSpec,
    pub right_hand: HandSpec,
    /// Output joints for three-point upper-body tracking.
    pub upper_body: Vec<String>,
    pub groups: Vec<GroupSpec>,
    pub primitives: Vec<PrimitiveSpec>,
}

fn default_forward() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedHand {
    pub wrist: usize,
    pub elbow: usize,
    pub fingers: Vec<usize>,
    pub fingertips: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGroup {
    pub name: String,
    pub kind: String,
    pub rule: GroupRule,
    pub members: Vec<usize>,
    pub probes: Vec<usize>,
}

/// A profile with every name bound to a skeleton joint index.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedProfile {
    pub profile: SkeletonProfile,
    pub head: usize,
    pub head_forward: Vec3,
    pub head_up: Vec3,
    pub hands: [ResolvedHand; 2],
    /// Non-finger, non-end-site joints in skeleton order.
    pub body_joints: Vec<usize>,
    /// Left-hand fingers then right-hand fingers.
    pub finger_joints: Vec<usize>,
    pub fingertips: Vec<usize>,
    pub upper_body: Vec<usize>,
    pub groups: Vec<ResolvedGroup>,
    /// Group index for every body or finger joint, `None` for end sites.
    pub joint_group: Vec<Option<usize>>,
}

impl SkeletonProfile {
    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        serde_json::from_str(text).map_err(|e| ProfileError::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn resolve(&self, skeleton: &Skeleton) -> Result<ResolvedProfile, ProfileError> {
        let idx = |name: &str| skeleton.index_of(name).ok_or_else(|| ProfileError::UnknownJoint(name.to_string()));
        let all = |names: &[String]| names.iter().map(|n| idx(n)).collect::<Result<Vec<_>, _>>();
        let hand = |h: &HandSpec| -> Result<ResolvedHand, ProfileError> {
            Ok(ResolvedHand {
                wrist: idx(&h.wrist)?,
                elbow: idx(&h.elbow)?,
                fingers: all(&h.fingers)?,
                fingertips: all(&h.fingertips)?,
            })
        };
        let hands = [hand(&self.left_hand)?, hand(&self.right_hand)?];
        let finger_joints: Vec<usize> = hands.iter().flat_map(|h| h.fingers.iter().copied()).collect();
        let fingertips: Vec<usize> = hands.iter().flat_map(|h| h.fingertips.iter().copied()).collect();
        let body_joints: Vec<usize> = (0..skeleton.len())
            .filter(|i| {
                !skeleton.joint(*i).is_end_site() && !finger_joints.contains(i) && !fingertips.contains(i)
            })
            .collect();

        let mut groups = Vec::with_capacity(self.groups.len());
        let mut joint_group: Vec<Option<usize>> = vec![None; skeleton.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            if let GroupRule::Hand { threshold } = g.rule {
                if !(0.0..=1.0).contains(&threshold) {
                    return Err(ProfileError::Invalid(format!("group `{}` threshold {threshold}", g.name)));
                }
            }
            let members = all(&g.members)?;
            for &m in &members {
                if let Some(prev) = joint_group[m] {
                    return Err(ProfileError::DoubleGrouped {
                        joint: skeleton.joint(m).name.clone(),
                        first: self.groups[prev].name.clone(),
                        second: g.name.clone(),
                    });
                }
                joint_group[m] = Some(gi);
            }
            let probes = all(&g.probes)?;
            if probes.is_empty() && g.rule != GroupRule::Always {
                return Err(ProfileError::Invalid(format!("group `{}` needs at least one probe", g.name)));
            }
            groups.push(ResolvedGroup { name: g.name.clone(), kind: g.kind.clone(), rule: g.rule, members, probes });
        }
        for &j in body_joints.iter().chain(&finger_joints) {
            if joint_group[j].is_none() {
                return Err(ProfileError::Ungrouped(skeleton.joint(j).name.clone()));
            }
        }
        for p in &self.primitives {
            let (from, to) = (idx(&p.from)?, idx(&p.to)?);
            if from == to || !skeleton.is_ancestor(from, to) {
                return Err(ProfileError::NotAChain { name: p.name.clone(), from: p.from.clone(), to: p.to.clone() });
            }
            if let Some(g) = &p.group {
                if !self.groups.iter().any(|s| &s.name == g) {
                    return Err(ProfileError::Invalid(format!("primitive `{}` names unknown group `{g}`", p.name)));
                }
            }
        }
        Ok(ResolvedProfile {
            profile: self.clone(),
            head: idx(&self.head)?,
            head_forward: Vec3::from(self.head_forward).normalize(),
            head_up: Vec3::from(self.head_up).normalize(),
            hands,
            body_joints,
            finger_joints,
            fingertips,
            upper_body: all(&self.upper_body)?,
            groups,
            joint_group,
        })
    }

    /// Profile for the bundled synthetic humanoid (see [`crate::synth`]).
    pub fn humanoid() -> Self {
        let s = |v: &str| v.to_string();
        let mut groups = vec![
            GroupSpec { name: s("head"), kind: s("head"), rule: GroupRule::Always, members: vec![s("Neck"), s("Head")], probes: vec![] },
            GroupSpec {
                name: s("torso"),
                kind: s("torso"),
                rule: GroupRule::Standard,
                members: vec![s("Hips"), s("Spine"), s("Spine1"), s("Spine2")],
                probes: vec![s("Spine1"), s("Spine2")],
            },
        ];
        let mut primitives = vec![
            PrimitiveSpec {
                name: s("torso"),
                from: s("Hips"),
                to: s("Neck"),
                shape: PrimitiveShapeSpec::Box { half_width: 0.10, half_depth: 0.08, pad: 0.0, width_axis: [1.0, 0.0, 0.0] },
                group: Some(s("torso")),
                contact_set: None,
            },
            PrimitiveSpec {
                name: s("head"),
                from: s("Head"),
                to: s("Head_End"),
                shape: PrimitiveShapeSpec::Box { half_width: 0.08, half_depth: 0.10, pad: 0.02, width_axis: [1.0, 0.0, 0.0] },
                group: Some(s("head")),
                contact_set: None,
            },
        ];
        for (side, p) in [("l", "Left"), ("r", "Right")] {
            let j = |suffix: &str| format!("{p}{suffix}");
            let hand_group = format!("{side}_hand");
            let mut std_group = |kind: &str, members: Vec<String>, probes: Vec<String>| {
                groups.push(GroupSpec { name: format!("{side}_{kind}"), kind: s(kind), rule: GroupRule::Standard, members, probes });
            };
            std_group("shoulder", vec![j("Shoulder"), j("Arm")], vec![j("Arm")]);
            std_group("elbow", vec![j("ForeArm")], vec![j("ForeArm")]);
            std_group("hip", vec![j("UpLeg")], vec![j("UpLeg")]);
            std_group("knee", vec![j("Leg")], vec![j("Leg")]);
            std_group("foot", vec![j("Foot"), j("ToeBase")], vec![j("Foot"), j("ToeBase"), j("ToeBase_End")]);
            let mut members = vec![j("Hand")];
            members.extend(hand_fingers(p));
            groups.push(GroupSpec { name: hand_group.clone(), kind: s("hand"), rule: GroupRule::Hand { threshold: 0.65 }, members, probes: vec![j("Hand")] });

            let mut capsule = |name: &str, from: String, to: String, shape: PrimitiveShapeSpec, group: Option<String>, contact: Option<String>| {
                primitives.push(PrimitiveSpec { name: format!("{side}_{name}"), from, to, shape, group, contact_set: contact });
            };
            let hand_set = Some(format!("{side}_hand"));
            capsule("clavicle", j("Shoulder"), j("Arm"), PrimitiveShapeSpec::Capsule { radius: 0.035 }, None, None);
            capsule(
                "upper_arm",
                j("Arm"),
                j("ForeArm"),
                PrimitiveShapeSpec::ScaledCapsule { length_ratio: 0.18, min_radius: 0.03, max_radius: 0.07 },
                None,
                None,
            );
            capsule("forearm", j("ForeArm"), j("Hand"), PrimitiveShapeSpec::Capsule { radius: 0.04 }, None, hand_set.clone());
            capsule(
                "palm",
                j("Hand"),
                j("HandMiddle1"),
                PrimitiveShapeSpec::Box { half_width: 0.045, half_depth: 0.012, pad: 0.005, width_axis: [0.0, 0.0, 1.0] },
                Some(hand_group.clone()),
                hand_set.clone(),
            );
            for finger in ["Thumb", "Index", "Middle", "Ring", "Pinky"] {
                let first = if finger == "Pinky" { 0 } else { 1 };
                let radius = if finger == "Thumb" { 0.010 } else { 0.009 };
                for k in first..=3 {
                    let from = j(&format!("Hand{finger}{k}"));
                    let to = if k == 3 { format!("{from}_End") } else { j(&format!("Hand{finger}{}", k + 1)) };
                    capsule(
                        &format!("{}{k}", finger.to_lowercase()),
                        from,
                        to,
                        PrimitiveShapeSpec::Capsule { radius },
                        Some(hand_group.clone()),
                        hand_set.clone(),
                    );
                }
            }
            capsule(
                "thigh",
                j("UpLeg"),
                j("Leg"),
                PrimitiveShapeSpec::ScaledCapsule { length_ratio: 0.15, min_radius: 0.04, max_radius: 0.08 },
                None,
                None,
            );
            capsule("shin", j("Leg"), j("Foot"), PrimitiveShapeSpec::Capsule { radius: 0.045 }, None, None);
            capsule("foot", j("Foot"), j("ToeBase"), PrimitiveShapeSpec::Capsule { radius: 0.035 }, None, None);
            capsule("toe", j("ToeBase"), j("ToeBase_End"), PrimitiveShapeSpec::Capsule { radius: 0.025 }, None, None);
        }
        let hand = |p: &str| HandSpec {
            wrist: format!("{p}Hand"),
            elbow: format!("{p}ForeArm"),
            fingers: hand_fingers(p),
            fingertips: ["Thumb3", "Index3", "Middle3", "Ring3", "Pinky3"]
                .iter()
                .map(|f| format!("{p}Hand{f}_End"))
                .collect(),
        };
        SkeletonProfile {
            name: s("humanoid"),
            head: s("Head"),
            head_forward: default_forward(),
            head_up: default_up(),
            left_hand: hand("Left"),
            right_hand: hand("Right"),
            upper_body: ["Spine1", "Spine2", "Neck", "LeftShoulder", "LeftArm", "LeftForeArm", "RightShoulder", "RightArm", "RightForeArm"]
                .iter()
                .map(|v| v.to_string())
                .collect(),
            groups,
            primitives,
        }
    }
}

/// The 16 finger joints of one humanoid hand.
fn hand_fingers(prefix: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(16);
    for finger in ["Thumb", "Index", "Middle", "Ring", "Pinky"] {
        let first = if finger == "Pinky" { 0 } else { 1 };
        for k in first..=3 {
            out.push(format!("{prefix}Hand{finger}{k}"));
        }
    }
    out
}
