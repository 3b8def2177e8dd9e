//! Task encoding, windows, the composite loss, Adam and the training loop.

mod encode;
mod loss;

pub use encode::{
    decode_positions, encode_positions, encode_prediction, encode_sequence, make_windows, rest_targets, EncodedSequence, FrameContext,
};
pub use loss::{bce_with_logit, composite_loss, LossBreakdown, LossSpec, LossWeights, Target};

use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dims, Edge, Network, Normalization, TaskLayout};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("sequence has {frames} frames, window needs {window}")]
    SequenceTooShort { frames: usize, window: usize },
    #[error("no training windows")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),
    #[error("sequence at {sequence} fps, model expects {model} fps")]
    FpsMismatch { sequence: f64, model: f64 },
    #[error("{records} occlusion records for {frames} frames")]
    RecordsMisaligned { frames: usize, records: usize },
}

/// A window of an encoded sequence, ending (inclusive) at frame `end`.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub seq: Arc<EncodedSequence>,
    pub end: usize,
    pub window: usize,
}

impl TrainingWindow {
    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.seq.inputs.slice(s![self.end + 1 - self.window..=self.end, ..])
    }

    pub fn target(&self) -> Target<'_> {
        Target {
            positions: self.seq.targets.row(self.end),
            labels: self.seq.labels.row(self.end),
            hidden: self.seq.hidden.row(self.end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_schedule: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-epoch learning-rate multiplier; 1 keeps it constant.
    pub lr_decay: f64,
    pub window: usize,
    pub fps: f64,
    pub hidden: usize,
    pub mlp: Vec<usize>,
    pub stride: usize,
    /// Windows per GEMM chunk. Affects speed only.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            batch_schedule: vec![256, 512, 1024, 1024, 1024],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_decay: 1.0,
            window: 27,
            fps: 30.0,
            hidden: 512,
            mlp: vec![512, 512],
            stride: 1,
            chunk: 128,
        }
    }
}

impl TrainConfig {
    /// Returns the offending field and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((name, format!("must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("epsilon", self.epsilon)?;
        positive("fps", self.fps)?;
        positive("lr_decay", self.lr_decay)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err((name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_schedule.len() != self.epochs {
            return Err((
                "batch_schedule",
                format!("has {} entries for {} epochs", self.batch_schedule.len(), self.epochs),
            ));
        }
        if self.batch_schedule.contains(&0) {
            return Err(("batch_schedule", "batch sizes must be positive".into()));
        }
        for (name, v) in [("window", self.window), ("hidden", self.hidden), ("stride", self.stride), ("chunk", self.chunk)] {
            if v == 0 {
                return Err((name, "must be positive".into()));
            }
        }
        if self.mlp.contains(&0) {
            return Err(("mlp", "layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self, layout: &TaskLayout) -> Dims {
        Dims {
            input: layout.input_width(),
            hidden: self.hidden,
            mlp: self.mlp.clone(),
            positions: layout.output_width(),
            logits: layout.groups.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    assert_eq!(params.len(), grads.len());
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn stack_inputs(windows: &[&TrainingWindow]) -> Array3<f64> {
    let t = windows[0].window;
    let width = windows[0].seq.inputs.ncols();
    let mut x = Array3::zeros((t, windows.len(), width));
    for (b, w) in windows.iter().enumerate() {
        x.slice_mut(s![.., b, ..]).assign(&w.inputs());
    }
    x
}

fn chunk_gradient(net: &Network, windows: &[&TrainingWindow], spec: &LossSpec, w: &LossWeights, scale: f64) -> (Vec<f64>, LossBreakdown) {
    let x = stack_inputs(windows);
    let (out, cache) = net.forward(&x).expect("window width matches network");
    let mut d_pos = Array2::zeros(out.positions.dim());
    let mut d_log = Array2::zeros(out.logits.dim());
    let mut total = LossBreakdown::default();
    for (b, win) in windows.iter().enumerate() {
        let (l, dp, dl) = composite_loss(out.positions.row(b), out.logits.row(b), &win.target(), spec, w);
        total.add(&l);
        d_pos.row_mut(b).assign(&(dp * scale));
        d_log.row_mut(b).assign(&(dl * scale));
    }
    let mut grad = vec![0.0; net.param_count()];
    net.backward(&cache, &d_pos, &d_log, &mut grad);
    (grad, total)
}

/// Mean loss over `windows` and its gradient. Chunks may run on `threads`
/// workers; partial gradients are summed in chunk order, so the result does
/// not depend on the thread count.
pub fn batch_gradient(
    net: &Network,
    windows: &[&TrainingWindow],
    spec: &LossSpec,
    w: &LossWeights,
    chunk: usize,
    threads: usize,
) -> (Vec<f64>, LossBreakdown) {
    let scale = 1.0 / windows.len() as f64;
    let chunks: Vec<&[&TrainingWindow]> = windows.chunks(chunk.max(1)).collect();
    let threads = threads.clamp(1, chunks.len().max(1));
    let parts: Vec<(Vec<f64>, LossBreakdown)> = if threads == 1 {
        chunks.iter().map(|c| chunk_gradient(net, c, spec, w, scale)).collect()
    } else {
        let mut slots: Vec<Option<(Vec<f64>, LossBreakdown)>> = vec![None; chunks.len()];
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let chunks = &chunks;
                    scope.spawn(move || {
                        (k..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, chunk_gradient(net, chunks[i], spec, w, scale)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, part) in h.join().expect("gradient worker panicked") {
                    slots[i] = Some(part);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk computed")).collect()
    };
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = LossBreakdown::default();
    for (g, l) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        loss.add(&l);
    }
    loss.scale(scale);
    (grad, loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LogRecord {
    Step { epoch: usize, step: usize, batch: usize, loss: LossBreakdown, wall_ms: u64 },
    Epoch { epoch: usize, steps: usize, windows: usize, mean: LossBreakdown, wall_ms: u64 },
}

pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<LogRecord>,
}

/// Trains a fresh network. Initial weights and every epoch's window order come
/// from `seed`.
pub fn train(
    corpus: &[Arc<EncodedSequence>],
    layout: &TaskLayout,
    cfg: &TrainConfig,
    w: &LossWeights,
    seed: u64,
    threads: usize,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(|(f, m)| TrainError::Config(format!("{f}: {m}")))?;
    w.validate().map_err(|(f, m)| TrainError::Config(format!("loss.{f}: {m}")))?;
    if cfg.window != layout.window {
        return Err(TrainError::Config(format!("window {} but layout uses {}", cfg.window, layout.window)));
    }
    let mut windows = Vec::new();
    for seq in corpus {
        if seq.len() >= cfg.window {
            windows.extend(make_windows(seq, cfg.window, cfg.stride)?);
        }
    }
    if windows.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let spec = LossSpec::from_layout(layout);
    let dims = cfg.dims(layout);
    let mut net = Network::init(dims.clone(), seed);
    let inputs: Vec<_> = corpus.iter().map(|s| s.inputs.view()).collect();
    let targets: Vec<_> = corpus.iter().map(|s| s.targets.view()).collect();
    net.set_normalization(Normalization::fit(&inputs, &targets, &dims)).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut adam = AdamState::new(net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let start = Instant::now();
    let mut log = Vec::new();
    let mut step = 0;
    let mut lr = cfg.learning_rate;
    for (epoch, &batch) in cfg.batch_schedule.iter().enumerate() {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for idx in order.chunks(batch) {
            let batch_windows: Vec<&TrainingWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let (grad, loss) = batch_gradient(&net, &batch_windows, &spec, w, cfg.chunk, threads);
            adam_step(&mut net.params, &grad, &mut adam, lr, cfg.beta1, cfg.beta2, cfg.epsilon);
            let mut weighted = loss;
            weighted.scale(idx.len() as f64);
            sum.add(&weighted);
            step += 1;
            steps += 1;
            let rec = LogRecord::Step { epoch, step, batch: idx.len(), loss, wall_ms: start.elapsed().as_millis() as u64 };
            on_log(&rec);
            log.push(rec);
        }
        sum.scale(1.0 / windows.len() as f64);
        let rec = LogRecord::Epoch { epoch, steps, windows: windows.len(), mean: sum, wall_ms: start.elapsed().as_millis() as u64 };
        on_log(&rec);
        log.push(rec);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { network: net, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub pass: bool,
}

/// Denominator floor for the relative error. Central differences at ε = 1e-5
/// of an O(10) loss carry about 2e-9 of combined truncation and rounding
/// error, so components below this magnitude are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Random tiny instance: a batch of two windows with random inputs, targets,
/// labels and hidden flags over a chain of joints alternating body and finger.
pub fn random_instance(dims: &Dims, window: usize, rng: &mut ChaCha8Rng) -> (Network, Vec<TrainingWindow>, LossSpec) {
    let joints = dims.positions / 3;
    let spec = LossSpec {
        finger: (0..joints).map(|k| k % 2 == 1).collect(),
        edges: (0..joints)
            .map(|k| Edge { parent: k.checked_sub(1), child: k, finger: k % 2 == 1 })
            .collect(),
    };
    let mut net = Network::init(dims.clone(), rng.random());
    for p in net.params.iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.5..0.5);
        }
    }
    let mut norm = Normalization::identity(dims);
    for v in norm.input_mean.iter_mut().chain(&mut norm.output_mean) {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in norm.input_scale.iter_mut().chain(&mut norm.output_scale) {
        *v = rng.random_range(0.5..2.0);
    }
    net.set_normalization(norm).expect("widths match dims");
    let frames = window + 1;
    let seq = Arc::new(EncodedSequence {
        id: "grad-check".into(),
        fps: 30.0,
        inputs: Array2::from_shape_fn((frames, dims.input), |_| rng.random_range(-1.0..1.0)),
        targets: Array2::from_shape_fn((frames, dims.positions), |_| rng.random_range(-1.0..1.0)),
        labels: Array2::from_shape_fn((frames, dims.logits), |_| if rng.random::<bool>() { 1.0 } else { 0.0 }),
        hidden: Array2::from_shape_fn((frames, joints), |_| rng.random()),
        context: Vec::new(),
        world: Vec::new(),
    });
    let windows = make_windows(&seq, window, 1).expect("instance is long enough");
    (net, windows, spec)
}

/// Compares analytic gradients with central differences over every parameter.
pub fn gradient_check(dims: &Dims, window: usize, trials: usize, eps: f64, tol: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = LossWeights::default();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..trials {
        let (mut net, windows, spec) = random_instance(dims, window, &mut rng);
        let refs: Vec<&TrainingWindow> = windows.iter().collect();
        let (grad, _) = batch_gradient(&net, &refs, &spec, &w, 64, 1);
        for i in 0..net.param_count() {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = batch_gradient_loss(&net, &refs, &spec, &w);
            net.params[i] = orig - eps;
            let down = batch_gradient_loss(&net, &refs, &spec, &w);
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let abs = (grad[i] - numeric).abs();
            let rel = abs / grad[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheckReport { trials, parameters_checked: checked, max_rel_error: max_rel, max_abs_error: max_abs, pass: max_rel <= tol }
}

fn batch_gradient_loss(net: &Network, windows: &[&TrainingWindow], spec: &LossSpec, w: &LossWeights) -> f64 {
    let x = stack_inputs(windows);
    let (out, _) = net.forward(&x).expect("window width matches network");
    let total: f64 = windows
        .iter()
        .enumerate()
        .map(|(b, win)| composite_loss(out.positions.row(b), out.logits.row(b), &win.target(), spec, w).0.total)
        .sum();
    total / windows.len() as f64
}

/// Convenience for inference: last-frame outputs for every window, in order.
pub fn predict_windows(net: &Network, windows: &[TrainingWindow], chunk: usize) -> (Array2<f64>, Array2<f64>) {
    let mut pos = Array2::zeros((windows.len(), net.dims.positions));
    let mut logits = Array2::zeros((windows.len(), net.dims.logits));
    for (c, part) in windows.chunks(chunk.max(1)).enumerate() {
        let refs: Vec<&TrainingWindow> = part.iter().collect();
        let (out, _) = net.forward(&stack_inputs(&refs)).expect("window width matches network");
        let at = c * chunk.max(1);
        pos.slice_mut(s![at..at + part.len(), ..]).assign(&out.positions);
        logits.slice_mut(s![at..at + part.len(), ..]).assign(&out.logits);
    }
    (pos, logits)
}

/// Loss of a single prediction row against a window target. Used by tests and reports.
pub fn window_loss(pred: ArrayView1<f64>, logits: ArrayView1<f64>, win: &TrainingWindow, spec: &LossSpec, w: &LossWeights) -> LossBreakdown {
    composite_loss(pred, logits, &win.target(), spec, w).0
}
