use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::model::{Edge, TaskLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub body_pos: f64,
    pub finger_pos: f64,
    pub occluded_multiplier: f64,
    pub parent_local: f64,
    pub bone_length_body: f64,
    pub bone_length_finger: f64,
    pub occlusion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            body_pos: 10.0,
            finger_pos: 100.0,
            occluded_multiplier: 1.2,
            parent_local: 3.0,
            bone_length_body: 7.0,
            bone_length_finger: 10.0,
            occlusion: 0.025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let fields = [
            ("body_pos", self.body_pos),
            ("finger_pos", self.finger_pos),
            ("occluded_multiplier", self.occluded_multiplier),
            ("parent_local", self.parent_local),
            ("bone_length_body", self.bone_length_body),
            ("bone_length_finger", self.bone_length_finger),
            ("occlusion", self.occlusion),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((name, format!("must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> LossWeights {
        LossWeights {
            body_pos: c * self.body_pos,
            finger_pos: c * self.finger_pos,
            occluded_multiplier: self.occluded_multiplier,
            parent_local: c * self.parent_local,
            bone_length_body: c * self.bone_length_body,
            bone_length_finger: c * self.bone_length_finger,
            occlusion: c * self.occlusion,
        }
    }
}

/// Output structure the loss needs: finger flags per slot and the parent-local edges.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub finger: Vec<bool>,
    pub edges: Vec<Edge>,
}

impl LossSpec {
    pub fn from_layout(layout: &TaskLayout) -> LossSpec {
        LossSpec { finger: layout.outputs.iter().map(|o| o.finger).collect(), edges: layout.edges.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pos: f64,
    pub kin: f64,
    pub occ: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, o: &LossBreakdown) {
        self.pos += o.pos;
        self.kin += o.kin;
        self.occ += o.occ;
        self.total += o.total;
    }

    pub fn scale(&mut self, c: f64) {
        self.pos *= c;
        self.kin *= c;
        self.occ *= c;
        self.total *= c;
    }
}

/// Ground truth for one window's final frame.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub positions: ArrayView1<'a, f64>,
    pub labels: ArrayView1<'a, f64>,
    pub hidden: ArrayView1<'a, bool>,
}

fn vec3(a: &ArrayView1<f64>, k: usize) -> [f64; 3] {
    [a[3 * k], a[3 * k + 1], a[3 * k + 2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Gradient of `‖v‖`; zero at the origin.
fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = norm(v);
    if n > 0.0 {
        [v[0] / n, v[1] / n, v[2] / n]
    } else {
        [0.0; 3]
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit against a {0,1} label, computed stably.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

/// L = L_pos + L_kin + L_occ with gradients with respect to the predicted
/// positions and logits. L_pos is normalised by the joint count; L_kin sums
/// over edges; L_occ sums cross-entropy over groups.
pub fn composite_loss(
    pred: ArrayView1<f64>,
    logits: ArrayView1<f64>,
    target: &Target,
    spec: &LossSpec,
    w: &LossWeights,
) -> (LossBreakdown, Array1<f64>, Array1<f64>) {
    let j = spec.finger.len();
    assert_eq!(pred.len(), 3 * j);
    assert_eq!(logits.len(), target.labels.len());
    let mut d_pos = Array1::zeros(3 * j);
    let occ_mult = |k: usize| if target.hidden[k] { w.occluded_multiplier } else { 1.0 };

    let mut pos = 0.0;
    for k in 0..j {
        let wk = if spec.finger[k] { w.finger_pos } else { w.body_pos } * occ_mult(k) / j as f64;
        let e = sub(vec3(&pred, k), vec3(&target.positions, k));
        pos += wk * norm(e);
        let u = unit(e);
        for c in 0..3 {
            d_pos[3 * k + c] += wk * u[c];
        }
    }

    let mut kin = 0.0;
    let bone = |a: &ArrayView1<f64>, e: &Edge| {
        let child = vec3(a, e.child);
        e.parent.map_or(child, |p| sub(child, vec3(a, p)))
    };
    for e in &spec.edges {
        let (b_hat, b) = (bone(&pred, e), bone(&target.positions, e));
        let w_dir = w.parent_local * occ_mult(e.child);
        let w_len = if e.finger { w.bone_length_finger } else { w.bone_length_body };
        let diff = sub(b_hat, b);
        let len_diff = norm(b_hat) - norm(b);
        kin += w_dir * norm(diff) + w_len * len_diff.abs();
        let (u, ub) = (unit(diff), unit(b_hat));
        let sign = if len_diff > 0.0 {
            1.0
        } else if len_diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        for c in 0..3 {
            let g = w_dir * u[c] + w_len * sign * ub[c];
            d_pos[3 * e.child + c] += g;
            if let Some(p) = e.parent {
                d_pos[3 * p + c] -= g;
            }
        }
    }

    let mut occ = 0.0;
    let mut d_logits = Array1::zeros(logits.len());
    for (g, (&l, &y)) in logits.iter().zip(target.labels.iter()).enumerate() {
        occ += w.occlusion * bce_with_logit(l, y);
        d_logits[g] = w.occlusion * (crate::model::sigmoid(l) - y);
    }
    (LossBreakdown { pos, kin, occ, total: pos + kin + occ }, d_pos, d_logits)
}
