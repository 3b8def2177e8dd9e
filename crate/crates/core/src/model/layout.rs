use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::skeleton::{forward_kinematics_full, heading, GroupRule, wrist_frame, ResolvedProfile, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    InsideOut,
    ThreePoint,
    Finger,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::InsideOut => "inside-out",
            Task::ThreePoint => "three-point",
            Task::Finger => "finger",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "inside-out" => Some(Task::InsideOut),
            "three-point" => Some(Task::ThreePoint),
            "finger" | "finger-synthesis" => Some(Task::Finger),
            _ => None,
        }
    }
}

/// Coordinate frame a position is expressed in. Side 0 is left, 1 is right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingFrame {
    Head,
    Wrist(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputJoint {
    pub name: String,
    pub joint: usize,
    pub frame: EncodingFrame,
    pub finger: bool,
}

/// One three-wide slot of the per-frame input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputFeature {
    /// Encoded joint position; `filled` slots hold the last visible value while hidden.
    Position { joint: usize, frame: EncodingFrame, filled: bool },
    /// `(0, y, 0)` of the joint's world position.
    Height { joint: usize },
    /// World-space image of a joint-local unit axis.
    Direction { joint: usize, axis: [f64; 3] },
}

/// Parent-local edge between output slots. `parent == None` means the edge
/// starts at the origin of the child's frame (the wrist for finger roots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub parent: Option<usize>,
    pub child: usize,
    pub finger: bool,
}

/// Input and output encoding shared by training, inference and weight files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub task: Task,
    pub profile: String,
    pub window: usize,
    pub fps: f64,
    pub inputs: Vec<InputFeature>,
    pub outputs: Vec<OutputJoint>,
    pub edges: Vec<Edge>,
    /// Occlusion groups predicted by the logit head; empty without one.
    /// Always-visible groups carry no signal and are left out.
    pub groups: Vec<String>,
}

fn finger_side(profile: &ResolvedProfile, joint: usize) -> Option<usize> {
    (0..2).find(|&s| profile.hands[s].fingers.contains(&joint) || profile.hands[s].fingertips.contains(&joint))
}

impl TaskLayout {
    pub fn new(task: Task, skeleton: &Skeleton, profile: &ResolvedProfile, window: usize, fps: f64) -> TaskLayout {
        let slot = |joint: usize, finger: bool| {
            let frame = match finger_side(profile, joint) {
                Some(side) if finger => EncodingFrame::Wrist(side),
                _ => EncodingFrame::Head,
            };
            OutputJoint { name: skeleton.joint(joint).name.clone(), joint, frame, finger }
        };
        let body: Vec<OutputJoint> = profile.body_joints.iter().map(|&j| slot(j, false)).collect();
        let fingers: Vec<OutputJoint> = profile.finger_joints.iter().map(|&j| slot(j, true)).collect();
        let tips: Vec<OutputJoint> = profile.fingertips.iter().map(|&j| slot(j, true)).collect();

        // Joint-local axes that map onto the wrist frame's forward and up columns at rest.
        let rest = forward_kinematics_full(skeleton, &skeleton.rest_pose());
        let rest_heading = heading(&rest.rotations[profile.head], &profile.head_forward, &profile.head_up);
        let wrist_axes = |side: usize| {
            let h = &profile.hands[side];
            let f = wrist_frame(&rest.positions[h.elbow], &rest.positions[h.wrist], &rest_heading);
            let inv = rest.rotations[h.wrist].inverse();
            [inv * f.column(1).into_owned(), inv * f.column(2).into_owned()].map(|v| [v.x, v.y, v.z])
        };
        let directions = |joint: usize, axes: [[f64; 3]; 2]| {
            axes.into_iter().map(move |axis| InputFeature::Direction { joint, axis })
        };

        let position = |o: &OutputJoint, filled: bool| InputFeature::Position { joint: o.joint, frame: o.frame, filled };
        let (inputs, outputs, groups) = match task {
            Task::InsideOut => {
                let outputs: Vec<OutputJoint> = body.into_iter().chain(fingers).collect();
                let inputs = outputs.iter().map(|o| position(o, true)).collect();
                let groups = profile.groups.iter().filter(|g| g.rule != GroupRule::Always).map(|g| g.name.clone()).collect();
                (inputs, outputs, groups)
            }
            Task::ThreePoint => {
                let head = profile.head;
                let head_axes = [profile.head_forward, profile.head_up].map(|v| [v.x, v.y, v.z]);
                let mut inputs = vec![InputFeature::Height { joint: head }];
                inputs.extend(directions(head, head_axes));
                for side in 0..2 {
                    let wrist = profile.hands[side].wrist;
                    inputs.push(InputFeature::Position { joint: wrist, frame: EncodingFrame::Head, filled: false });
                    inputs.extend(directions(wrist, wrist_axes(side)));
                }
                let outputs = profile.upper_body.iter().map(|&j| slot(j, false)).collect();
                (inputs, outputs, Vec::new())
            }
            Task::Finger => {
                let mut inputs: Vec<InputFeature> = body.iter().map(|o| position(o, false)).collect();
                for side in 0..2 {
                    inputs.extend(directions(profile.hands[side].wrist, wrist_axes(side)));
                }
                (inputs, fingers.into_iter().chain(tips).collect(), Vec::new())
            }
        };
        let edges = build_edges(skeleton, profile, &outputs);
        TaskLayout { task, profile: profile.profile.name.clone(), window, fps, inputs, outputs, edges, groups }
    }

    pub fn input_width(&self) -> usize {
        3 * self.inputs.len()
    }

    pub fn output_width(&self) -> usize {
        3 * self.outputs.len()
    }

    pub fn hash(&self) -> String {
        layout_hash(self)
    }
}

/// Each output slot links to its nearest output ancestor in the same frame.
fn build_edges(skeleton: &Skeleton, profile: &ResolvedProfile, outputs: &[OutputJoint]) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (child, o) in outputs.iter().enumerate() {
        let mut p = skeleton.parent(o.joint);
        while let Some(j) = p {
            if let EncodingFrame::Wrist(side) = o.frame {
                if j == profile.hands[side].wrist {
                    edges.push(Edge { parent: None, child, finger: o.finger });
                    break;
                }
            }
            if let Some(slot) = outputs.iter().position(|q| q.joint == j && q.frame == o.frame) {
                edges.push(Edge { parent: Some(slot), child, finger: o.finger });
                break;
            }
            p = skeleton.parent(j);
        }
    }
    edges
}

/// Hex SHA-256 of the canonical JSON form.
pub fn layout_hash(layout: &TaskLayout) -> String {
    let json = serde_json::to_vec(layout).expect("layout serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}
