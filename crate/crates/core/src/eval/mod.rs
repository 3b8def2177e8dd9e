//! Joint-error metrics, the last-known-position baseline, corpus splitting
//! and the evaluation harness.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ik::{acceleration_metric, smooth_stream, solve_sequence, IkConfig, IkError, IkTarget, DEFAULT_ACCEL_THRESHOLD};
use crate::model::{EncodingFrame, Network, TaskLayout};
use crate::occlusion::OcclusionRig;
use crate::skeleton::{MotionSequence, ResolvedProfile, Skeleton, Vec3};
use crate::training::{
    decode_positions, encode_prediction, encode_sequence, make_windows, predict_windows, rest_targets, EncodedSequence,
    TrainError,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no (joint, frame) pairs in the selected subset")]
    EmptySubset,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("layout hash mismatch: weights {weights}, task {task}")]
    LayoutHashMismatch { weights: String, task: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ik(#[from] IkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmsjpe_cm: f64,
    pub mpjpe_cm: f64,
    pub count: usize,
}

/// Running sums of per-pair errors in meters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn push(&mut self, err_m: f64) {
        self.sum += err_m;
        self.sum_sq += err_m * err_m;
        self.count += 1;
    }

    pub fn metrics(&self) -> Result<Metrics, EvalError> {
        if self.count == 0 {
            return Err(EvalError::EmptySubset);
        }
        let n = self.count as f64;
        Ok(Metrics { rmsjpe_cm: 100.0 * (self.sum_sq / n).sqrt(), mpjpe_cm: 100.0 * self.sum / n, count: self.count })
    }
}

/// MPJPE and RMSJPE in centimeters over the (frame, joint) pairs accepted by `select`.
pub fn compute_metrics(
    pred: &[Vec<Vec3>],
    gt: &[Vec<Vec3>],
    select: impl Fn(usize, usize) -> bool,
) -> Result<Metrics, EvalError> {
    let mut acc = ErrorAccumulator::default();
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        for (j, (a, b)) in p.iter().zip(g).enumerate() {
            if select(t, j) {
                acc.push((a - b).norm());
            }
        }
    }
    acc.metrics()
}

/// Holds each unobserved slot at its last observed value; slots never
/// observed take `rest`.
pub fn baseline_predict(targets: ArrayView2<f64>, observed: ArrayView2<bool>, rest: &[f64]) -> Array2<f64> {
    let mut out = targets.to_owned();
    let mut last = rest.to_vec();
    for t in 0..targets.nrows() {
        for k in 0..observed.ncols() {
            for c in 0..3 {
                if observed[[t, k]] {
                    last[3 * k + c] = targets[[t, 3 * k + c]];
                }
                out[[t, 3 * k + c]] = last[3 * k + c];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitEntry {
    pub id: String,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub held_out_subjects: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Sequence-level split. Held-out subjects go to test; the rest are shuffled
/// by `seed` and the first `round(ratio · n)` (at most all of them) train.
pub fn split_corpus(entries: &[SplitEntry], ratio: f64, held_out: &[String], seed: u64) -> Result<SplitManifest, EvalError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(EvalError::InsufficientData(format!("ratio {ratio} outside (0, 1]")));
    }
    let mut ids: Vec<&SplitEntry> = entries.iter().collect();
    ids.sort_by(|a, b| a.id.cmp(&b.id));
    if ids.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(EvalError::InsufficientData("duplicate sequence ids".into()));
    }
    let is_held = |e: &SplitEntry| e.subject.as_ref().is_some_and(|s| held_out.contains(s));
    let mut test: Vec<String> = ids.iter().filter(|e| is_held(e)).map(|e| e.id.clone()).collect();
    let mut rest: Vec<String> = ids.iter().filter(|e| !is_held(e)).map(|e| e.id.clone()).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * entries.len() as f64).round() as usize).min(rest.len());
    let mut train: Vec<String> = rest[..n_train].to_vec();
    test.extend_from_slice(&rest[n_train..]);
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::InsufficientData(format!("{} train / {} test sequences", train.len(), test.len())));
    }
    train.sort();
    test.sort();
    let mut held: Vec<String> = held_out.to_vec();
    held.sort();
    Ok(SplitManifest { seed, ratio, held_out_subjects: held, train, test })
}

/// Simulates occlusion when `rig` is given and encodes `seq` for `layout`.
pub fn prepare_sequence(
    id: &str,
    seq: &MotionSequence,
    rig: Option<&OcclusionRig>,
    layout: &TaskLayout,
    profile: &ResolvedProfile,
) -> Result<EncodedSequence, EvalError> {
    let records = rig.map(|r| r.simulate_sequence(seq));
    Ok(encode_sequence(id, seq, records.as_deref(), layout, profile)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Smooth and IK-solve the network output as an extra model row.
    pub post_process: bool,
    pub smooth_beta: f64,
    pub ik: IkConfig,
    pub accel_threshold: f64,
    pub chunk: usize,
    /// Label stored in the report so results are never mistaken for another corpus.
    pub corpus_label: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            post_process: true,
            smooth_beta: 0.8,
            ik: IkConfig::default(),
            accel_threshold: DEFAULT_ACCEL_THRESHOLD,
            chunk: 256,
            corpus_label: "synthetic".into(),
        }
    }
}

impl EvalConfig {
    /// Returns the offending field path and reason.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if !(0.0..1.0).contains(&self.smooth_beta) {
            return Err(("smooth_beta".into(), format!("{} outside [0, 1)", self.smooth_beta)));
        }
        if !(self.accel_threshold > 0.0 && self.accel_threshold.is_finite()) {
            return Err(("accel_threshold".into(), "must be positive".into()));
        }
        if self.chunk == 0 {
            return Err(("chunk".into(), "must be positive".into()));
        }
        self.ik.validate().map_err(|(f, m)| (format!("ik.{f}"), m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub subset: String,
    pub condition: String,
    pub rmsjpe_cm: f64,
    pub mpjpe_cm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub corpus: String,
    pub layout_hash: String,
    pub sequences: Vec<String>,
    pub frames: usize,
    pub rows: Vec<ReportRow>,
    /// Fraction of (joint, frame) pairs above the acceleration threshold, per stream.
    pub acceleration: BTreeMap<String, f64>,
    pub mask_accuracy: Option<f64>,
    pub ik_mean_residual_cm: Option<f64>,
}

impl EvalReport {
    pub fn row(&self, model: &str, subset: &str, condition: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.subset == subset && r.condition == condition)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,subset,condition,rmsjpe_cm,mpjpe_cm,count\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:.6},{:.6},{}\n", r.model, r.subset, r.condition, r.rmsjpe_cm, r.mpjpe_cm, r.count));
        }
        for (k, v) in &self.acceleration {
            out.push_str(&format!("accel:{k},all,all,{v:.6},,\n"));
        }
        out
    }
}

pub const SUBSETS: [&str; 3] = ["body", "finger", "all"];
pub const CONDITIONS: [&str; 2] = ["occluded", "all"];

/// Error accumulators for every (subset, condition) pair of one model.
#[derive(Debug, Clone, Default)]
pub struct ModelErrors {
    acc: [[ErrorAccumulator; 2]; 3],
}

impl ModelErrors {
    /// Body errors are global, finger errors wrist-local in the prediction's
    /// own wrist frame, and the `all` subset is global for every joint.
    pub fn add_frame(
        &mut self,
        layout: &TaskLayout,
        profile: &ResolvedProfile,
        seq: &EncodedSequence,
        t: usize,
        global: &[Vec3],
    ) {
        let local = encode_prediction(layout, profile, &seq.context[t], global);
        for (k, o) in layout.outputs.iter().enumerate() {
            let g_err = (global[k] - seq.world[t][k]).norm();
            let subset_err = if o.finger && matches!(o.frame, EncodingFrame::Wrist(_)) {
                let d: f64 = (0..3).map(|c| (local[3 * k + c] - seq.targets[[t, 3 * k + c]]).powi(2)).sum();
                (1, d.sqrt())
            } else {
                (0, g_err)
            };
            let hidden = seq.hidden[[t, k]];
            for (subset, err) in [subset_err, (2, g_err)] {
                self.acc[subset][1].push(err);
                if hidden {
                    self.acc[subset][0].push(err);
                }
            }
        }
    }

    pub fn rows(&self, model: &str) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for (s, subset) in SUBSETS.iter().enumerate() {
            for (c, condition) in CONDITIONS.iter().enumerate() {
                if let Ok(m) = self.acc[s][c].metrics() {
                    rows.push(ReportRow {
                        model: model.into(),
                        subset: (*subset).into(),
                        condition: (*condition).into(),
                        rmsjpe_cm: m.rmsjpe_cm,
                        mpjpe_cm: m.mpjpe_cm,
                        count: m.count,
                    });
                }
            }
        }
        rows
    }
}

#[derive(Default)]
struct AccelPool {
    above: f64,
    total: f64,
}

impl AccelPool {
    fn add(&mut self, stream: &[Vec<Vec3>], fps: f64, threshold: f64) -> Result<(), EvalError> {
        if stream.len() < 3 {
            return Ok(());
        }
        let pairs = ((stream.len() - 2) * stream[0].len()) as f64;
        self.above += acceleration_metric(stream, fps, threshold)? * pairs;
        self.total += pairs;
        Ok(())
    }

    fn fraction(&self) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            self.above / self.total
        }
    }
}

/// Source of encoded predictions for one sequence (rows aligned with frames
/// `window − 1 ..`).
pub trait Predictor {
    fn name(&self) -> &str;
    fn predict(&self, seq: &Arc<EncodedSequence>) -> Result<(Array2<f64>, Option<Array2<f64>>), EvalError>;
}

pub struct NetworkPredictor<'a> {
    pub net: &'a Network,
    pub window: usize,
    pub chunk: usize,
}

impl Predictor for NetworkPredictor<'_> {
    fn name(&self) -> &str {
        "network"
    }

    fn predict(&self, seq: &Arc<EncodedSequence>) -> Result<(Array2<f64>, Option<Array2<f64>>), EvalError> {
        let windows = make_windows(seq, self.window, 1)?;
        let (pos, logits) = predict_windows(self.net, &windows, self.chunk);
        Ok((pos, if logits.ncols() > 0 { Some(logits) } else { None }))
    }
}

/// Returns ground-truth encodings; used to check the harness itself.
pub struct OraclePredictor {
    pub window: usize,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, seq: &Arc<EncodedSequence>) -> Result<(Array2<f64>, Option<Array2<f64>>), EvalError> {
        Ok((seq.targets.slice(ndarray::s![self.window - 1.., ..]).to_owned(), None))
    }
}

/// Evaluates `predictor` and the baseline on every test sequence.
///
/// When `expected_hash` is given it must equal the task layout's hash.
#[allow(clippy::too_many_arguments)]
pub fn run_evaluation(
    test: &[Arc<EncodedSequence>],
    predictor: &dyn Predictor,
    expected_hash: Option<&str>,
    layout: &TaskLayout,
    skeleton: &Arc<Skeleton>,
    profile: &ResolvedProfile,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let hash = layout.hash();
    if let Some(h) = expected_hash {
        if h != hash {
            return Err(EvalError::LayoutHashMismatch { weights: h.to_string(), task: hash });
        }
    }
    let window = layout.window;
    let rest = rest_targets(layout, skeleton, profile);
    let targets: Vec<usize> = layout.outputs.iter().map(|o| o.joint).collect();
    let model = predictor.name().to_string();
    let post_name = format!("{model}+post");

    let mut errors: BTreeMap<String, ModelErrors> = BTreeMap::new();
    let mut accel: BTreeMap<String, AccelPool> = BTreeMap::new();
    let (mut mask_hits, mut mask_total) = (0usize, 0usize);
    let (mut ik_residual, mut ik_frames) = (0.0, 0usize);
    let mut frames = 0;
    let mut ids = Vec::new();
    for seq in test {
        if seq.len() < window {
            continue;
        }
        ids.push(seq.id.clone());
        let range = window - 1..seq.len();
        frames += range.len();
        let observed = if layout.task == crate::model::Task::InsideOut {
            seq.hidden.mapv(|h| !h)
        } else {
            Array2::from_elem(seq.hidden.dim(), false)
        };
        let baseline = baseline_predict(seq.targets.view(), observed.view(), &rest);
        let (pred, logits) = predictor.predict(seq)?;
        if pred.nrows() != range.len() || pred.ncols() != layout.output_width() {
            return Err(EvalError::InsufficientData(format!("predictor returned {:?} rows for {}", pred.dim(), seq.id)));
        }
        let gt: Vec<Vec<Vec3>> = range.clone().map(|t| seq.world[t].clone()).collect();
        let base_global: Vec<Vec<Vec3>> =
            range.clone().map(|t| decode_positions(layout, profile, &seq.context[t], baseline.row(t))).collect();
        let net_global: Vec<Vec<Vec3>> = range
            .clone()
            .enumerate()
            .map(|(i, t)| decode_positions(layout, profile, &seq.context[t], pred.row(i)))
            .collect();

        let mut streams: Vec<(String, Vec<Vec<Vec3>>)> = vec![("baseline".into(), base_global), (model.clone(), net_global)];
        if cfg.post_process {
            let smoothed = smooth_stream(&streams[1].1, cfg.smooth_beta)?;
            let ik_targets: Vec<Vec<IkTarget>> = smoothed
                .iter()
                .map(|f| f.iter().zip(&targets).map(|(p, &joint)| IkTarget { joint, position: *p, weight: 1.0 }).collect())
                .collect();
            let solved = solve_sequence(skeleton, &ik_targets, None, &cfg.ik)?;
            for s in &solved {
                ik_residual += s.residual;
                ik_frames += 1;
            }
            let post: Vec<Vec<Vec3>> = solved.iter().map(|s| targets.iter().map(|&j| s.positions[j]).collect()).collect();
            streams.push((post_name.clone(), post));
        }
        for (name, stream) in &streams {
            let e = errors.entry(name.clone()).or_default();
            for (i, t) in range.clone().enumerate() {
                e.add_frame(layout, profile, seq, t, &stream[i]);
            }
            accel.entry(name.clone()).or_default().add(stream, seq.fps, cfg.accel_threshold)?;
        }
        accel.entry("ground-truth".into()).or_default().add(&gt, seq.fps, cfg.accel_threshold)?;
        if let Some(l) = logits {
            for (i, t) in range.clone().enumerate() {
                for g in 0..l.ncols() {
                    let predicted = l[[i, g]] > 0.0;
                    mask_hits += usize::from(predicted == (seq.labels[[t, g]] > 0.5));
                    mask_total += 1;
                }
            }
        }
    }
    if frames == 0 {
        return Err(EvalError::InsufficientData("no test sequence covers a full window".into()));
    }
    let mut rows = Vec::new();
    for (name, e) in &errors {
        rows.extend(e.rows(name));
    }
    Ok(EvalReport {
        task: layout.task.as_str().into(),
        corpus: cfg.corpus_label.clone(),
        layout_hash: hash,
        sequences: ids,
        frames,
        rows,
        acceleration: accel.into_iter().map(|(k, v)| (k, v.fraction())).collect(),
        mask_accuracy: (mask_total > 0).then(|| mask_hits as f64 / mask_total as f64),
        ik_mean_residual_cm: (ik_frames > 0).then(|| 100.0 * ik_residual / ik_frames as f64),
    })
}
