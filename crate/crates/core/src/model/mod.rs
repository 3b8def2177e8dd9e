//! GRU backbone with a skip connection and two MLP heads (joint positions and
//! occlusion logits), with explicit batched forward and reverse passes.
//!
//! All parameters live in one flat `Vec<f64>` so optimizers, gradient checks
//! and the weight file treat them uniformly; typed views slice into it.

mod layout;
mod weights;

pub use layout::{layout_hash, Edge, EncodingFrame, InputFeature, OutputJoint, Task, TaskLayout};
pub use weights::{load_weights, save_weights, WeightError, WeightHeader, WEIGHT_MAGIC, WEIGHT_VERSION};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Network sizes. `logits == 0` drops the occlusion head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub mlp: Vec<usize>,
    pub positions: usize,
    pub logits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layer {
    w: Block,
    b: Block,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Offsets {
    /// (W, U, b) for the update gate, reset gate and candidate, in that order.
    gates: [(Block, Block, Block); 3],
    pos: Vec<Layer>,
    occ: Vec<Layer>,
    total: usize,
}

impl Offsets {
    fn new(d: &Dims) -> Offsets {
        let mut at = 0;
        let mut take = |rows: usize, cols: usize| {
            let b = Block { offset: at, rows, cols };
            at += rows * cols;
            b
        };
        let gates = [(); 3].map(|_| (take(d.hidden, d.input), take(d.hidden, d.hidden), take(d.hidden, 1)));
        let mut head = |out: usize| -> Vec<Layer> {
            if out == 0 {
                return Vec::new();
            }
            let mut fan_in = d.hidden + d.input;
            let mut layers = Vec::new();
            for &width in d.mlp.iter().chain(std::iter::once(&out)) {
                layers.push(Layer { w: take(width, fan_in), b: take(width, 1) });
                fan_in = width;
            }
            layers
        };
        let pos = head(d.positions);
        let occ = head(d.logits);
        Offsets { gates, pos, occ, total: at }
    }
}

/// Borrowed GRU weights.
#[derive(Debug, Clone)]
pub struct GruParams<'a> {
    pub w_z: ArrayView2<'a, f64>,
    pub u_z: ArrayView2<'a, f64>,
    pub b_z: ArrayView1<'a, f64>,
    pub w_r: ArrayView2<'a, f64>,
    pub u_r: ArrayView2<'a, f64>,
    pub b_r: ArrayView1<'a, f64>,
    pub w_y: ArrayView2<'a, f64>,
    pub u_y: ArrayView2<'a, f64>,
    pub b_y: ArrayView1<'a, f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One recurrent update: gates from the input and previous output, then a
/// convex blend of the previous output and the candidate.
pub fn gru_step(p: &GruParams, x: ArrayView1<f64>, y_prev: ArrayView1<f64>) -> Array1<f64> {
    let z = (p.w_z.dot(&x) + p.u_z.dot(&y_prev) + p.b_z).mapv(sigmoid);
    let r = (p.w_r.dot(&x) + p.u_r.dot(&y_prev) + p.b_r).mapv(sigmoid);
    let y_hat = (p.w_y.dot(&x) + p.u_y.dot(&(&r * &y_prev)) + p.b_y).mapv(f64::tanh);
    &y_prev + &(&z * &(&y_hat - &y_prev))
}

/// Fixed per-feature affine maps around the trainable layers. Inputs enter as
/// `(x − input_mean) · input_scale`; positions leave as
/// `raw · output_scale + output_mean`. Not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_scale: Vec<f64>,
}

/// Standard deviations below this leave the feature unscaled.
const MIN_STD: f64 = 1e-6;

fn column_stats(parts: &[ArrayView2<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; width];
    let mut n = 0usize;
    for a in parts {
        for row in a.rows() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        n += a.nrows();
    }
    let mean: Vec<f64> = sum.iter().map(|s| if n > 0 { s / n as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; width];
    for a in parts {
        for row in a.rows() {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = sq.iter().map(|s| if n > 0 { (s / n as f64).sqrt() } else { 0.0 }).collect();
    (mean, std)
}

impl Normalization {
    pub fn identity(d: &Dims) -> Normalization {
        Normalization {
            input_mean: vec![0.0; d.input],
            input_scale: vec![1.0; d.input],
            output_mean: vec![0.0; d.positions],
            output_scale: vec![1.0; d.positions],
        }
    }

    /// Column means and standard deviations of the given input and target rows.
    pub fn fit(inputs: &[ArrayView2<f64>], targets: &[ArrayView2<f64>], d: &Dims) -> Normalization {
        let (input_mean, in_std) = column_stats(inputs, d.input);
        let (output_mean, out_std) = column_stats(targets, d.positions);
        Normalization {
            input_mean,
            input_scale: in_std.iter().map(|&s| if s > MIN_STD { 1.0 / s } else { 1.0 }).collect(),
            output_mean,
            output_scale: out_std.iter().map(|&s| if s > MIN_STD { s } else { 1.0 }).collect(),
        }
    }

    fn fits(&self, d: &Dims) -> bool {
        self.input_mean.len() == d.input
            && self.input_scale.len() == d.input
            && self.output_mean.len() == d.positions
            && self.output_scale.len() == d.positions
    }

    /// Values in storage order: input mean, input scale, output mean, output scale.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.input_mean, &self.input_scale, &self.output_mean, &self.output_scale].into_iter().flatten().copied().collect()
    }

    pub fn unflatten(values: &[f64], d: &Dims) -> Result<Normalization, ModelError> {
        if values.len() != 2 * (d.input + d.positions) {
            return Err(ModelError::Dimension(format!("{} normalization values for {} features", values.len(), 2 * (d.input + d.positions))));
        }
        let (input, output) = values.split_at(2 * d.input);
        Ok(Normalization {
            input_mean: input[..d.input].to_vec(),
            input_scale: input[d.input..].to_vec(),
            output_mean: output[..d.positions].to_vec(),
            output_scale: output[d.positions..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub dims: Dims,
    pub params: Vec<f64>,
    norm: Normalization,
    offsets: Offsets,
}

/// Intermediate values of a batched forward pass, kept for the reverse pass.
pub struct Cache {
    /// Normalized inputs.
    x: Array3<f64>,
    y_prev: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    r: Vec<Array2<f64>>,
    y_hat: Vec<Array2<f64>>,
    /// Inputs to each head layer; the first is the skip concatenation.
    pos_inputs: Vec<Array2<f64>>,
    occ_inputs: Vec<Array2<f64>>,
}

pub struct Output {
    /// Batch × positions.
    pub positions: Array2<f64>,
    /// Batch × logits (zero columns without an occlusion head).
    pub logits: Array2<f64>,
}

fn view(params: &[f64], b: Block) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((b.rows, b.cols), &params[b.offset..b.offset + b.len()]).expect("block in range")
}

fn view1(params: &[f64], b: Block) -> ArrayView1<'_, f64> {
    ArrayView1::from(&params[b.offset..b.offset + b.len()])
}

fn view_mut(params: &mut [f64], b: Block) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut params[b.offset..b.offset + b.len()]).expect("block in range")
}

fn view1_mut(params: &mut [f64], b: Block) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut params[b.offset..b.offset + b.len()])
}

/// `a · wᵀ + b` for a batch `a`.
fn affine(a: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((a.nrows(), w.nrows()), |(_, j)| b[j]);
    general_mat_mul(1.0, a, &w.t(), 1.0, &mut out);
    out
}

impl Network {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(dims: Dims, seed: u64) -> Network {
        let offsets = Offsets::new(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; offsets.total];
        let weights = offsets
            .gates
            .iter()
            .flat_map(|(w, u, _)| [*w, *u])
            .chain(offsets.pos.iter().chain(&offsets.occ).map(|l| l.w));
        for b in weights {
            let bound = 1.0 / (b.cols as f64).sqrt();
            for p in &mut params[b.offset..b.offset + b.len()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Network { norm: Normalization::identity(&dims), dims, params, offsets }
    }

    pub fn zeros(dims: Dims) -> Network {
        let offsets = Offsets::new(&dims);
        Network { params: vec![0.0; offsets.total], norm: Normalization::identity(&dims), dims, offsets }
    }

    pub fn from_params(dims: Dims, params: Vec<f64>) -> Result<Network, ModelError> {
        let offsets = Offsets::new(&dims);
        if params.len() != offsets.total {
            return Err(ModelError::Dimension(format!("{} parameters for {} slots", params.len(), offsets.total)));
        }
        Ok(Network { norm: Normalization::identity(&dims), dims, params, offsets })
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) -> Result<(), ModelError> {
        if !norm.fits(&self.dims) {
            return Err(ModelError::Dimension("normalization widths do not match the network".into()));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.offsets.total
    }

    pub fn gru(&self) -> GruParams<'_> {
        let p = &self.params;
        let [(wz, uz, bz), (wr, ur, br), (wy, uy, by)] = self.offsets.gates;
        GruParams {
            w_z: view(p, wz),
            u_z: view(p, uz),
            b_z: view1(p, bz),
            w_r: view(p, wr),
            u_r: view(p, ur),
            b_r: view1(p, br),
            w_y: view(p, wy),
            u_y: view(p, uy),
            b_y: view1(p, by),
        }
    }

    /// Named parameter blocks with their shapes, in storage order.
    pub fn blocks(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (g, (w, u, b)) in ["z", "r", "y"].iter().zip(&self.offsets.gates) {
            out.push((format!("W_{g}"), w.rows, w.cols));
            out.push((format!("U_{g}"), u.rows, u.cols));
            out.push((format!("b_{g}"), b.rows, b.cols));
        }
        for (head, layers) in [("pos", &self.offsets.pos), ("occ", &self.offsets.occ)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{head}.W{i}"), l.w.rows, l.w.cols));
                out.push((format!("{head}.b{i}"), l.b.rows, l.b.cols));
            }
        }
        out
    }

    /// Runs one window (T × input) and returns last-frame positions and logits.
    pub fn forward_window(&self, window: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
        let x = window.insert_axis(Axis(1)).to_owned();
        let out = self.forward(&x)?.0;
        Ok((out.positions.row(0).to_owned(), out.logits.row(0).to_owned()))
    }

    /// Batched forward pass over `x` shaped (T, batch, input).
    pub fn forward(&self, x: &Array3<f64>) -> Result<(Output, Cache), ModelError> {
        let (t_len, batch, input) = x.dim();
        if input != self.dims.input || t_len == 0 {
            return Err(ModelError::Dimension(format!(
                "window of {t_len} frames × {input} features, network expects {} features",
                self.dims.input
            )));
        }
        let mut x = x.clone();
        for mut lane in x.lanes_mut(Axis(2)) {
            for ((v, m), s) in lane.iter_mut().zip(&self.norm.input_mean).zip(&self.norm.input_scale) {
                *v = (*v - m) * s;
            }
        }
        let p = &self.params;
        let h = self.dims.hidden;
        let [(wz, uz, bz), (wr, ur, br), (wy, uy, by)] = self.offsets.gates;
        let mut y = Array2::<f64>::zeros((batch, h));
        let mut cache_y = Vec::with_capacity(t_len);
        let mut cache_z = Vec::with_capacity(t_len);
        let mut cache_r = Vec::with_capacity(t_len);
        let mut cache_yh = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = x.index_axis(Axis(0), t);
            let mut az = affine(&xt, view(p, wz), view1(p, bz));
            general_mat_mul(1.0, &y, &view(p, uz).t(), 1.0, &mut az);
            let z = az.mapv(sigmoid);
            let mut ar = affine(&xt, view(p, wr), view1(p, br));
            general_mat_mul(1.0, &y, &view(p, ur).t(), 1.0, &mut ar);
            let r = ar.mapv(sigmoid);
            let ry = &r * &y;
            let mut ay = affine(&xt, view(p, wy), view1(p, by));
            general_mat_mul(1.0, &ry, &view(p, uy).t(), 1.0, &mut ay);
            let y_hat = ay.mapv(f64::tanh);
            let y_next = &y + &(&z * &(&y_hat - &y));
            cache_y.push(std::mem::replace(&mut y, y_next));
            cache_z.push(z);
            cache_r.push(r);
            cache_yh.push(y_hat);
        }
        let mut skip = Array2::<f64>::zeros((batch, h + input));
        skip.slice_mut(s![.., ..h]).assign(&y);
        skip.slice_mut(s![.., h..]).assign(&x.index_axis(Axis(0), t_len - 1));
        let (mut positions, pos_inputs) = self.head_forward(&self.offsets.pos, &skip);
        for mut row in positions.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.norm.output_mean).zip(&self.norm.output_scale) {
                *v = *v * s + m;
            }
        }
        let (logits, occ_inputs) = if self.offsets.occ.is_empty() {
            (Array2::zeros((batch, 0)), Vec::new())
        } else {
            self.head_forward(&self.offsets.occ, &skip)
        };
        let cache = Cache {
            x,
            y_prev: cache_y,
            z: cache_z,
            r: cache_r,
            y_hat: cache_yh,
            pos_inputs,
            occ_inputs,
        };
        Ok((Output { positions, logits }, cache))
    }

    fn head_forward(&self, layers: &[Layer], input: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut inputs = vec![input.clone()];
        let mut a = input.clone();
        for (i, l) in layers.iter().enumerate() {
            let mut out = affine(&a.view(), view(&self.params, l.w), view1(&self.params, l.b));
            if i + 1 < layers.len() {
                out.mapv_inplace(f64::tanh);
                inputs.push(out.clone());
            }
            a = out;
        }
        (a, inputs)
    }

    /// Reverse pass. `d_positions` and `d_logits` are loss gradients with
    /// respect to the outputs of [`Network::forward`]; the result is added to `grad`.
    pub fn backward(&self, cache: &Cache, d_positions: &Array2<f64>, d_logits: &Array2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.offsets.total);
        let h = self.dims.hidden;
        let d_raw = d_positions * &ArrayView1::from(&self.norm.output_scale);
        let mut d_skip = self.head_backward(&self.offsets.pos, &cache.pos_inputs, &d_raw, grad);
        if !self.offsets.occ.is_empty() {
            d_skip += &self.head_backward(&self.offsets.occ, &cache.occ_inputs, d_logits, grad);
        }
        let mut dy = d_skip.slice(s![.., ..h]).to_owned();
        let p = &self.params;
        let [(wz, uz, bz), (wr, ur, br), (wy, uy, by)] = self.offsets.gates;
        for t in (0..cache.z.len()).rev() {
            let xt = cache.x.index_axis(Axis(0), t);
            let (y_prev, z, r, y_hat) = (&cache.y_prev[t], &cache.z[t], &cache.r[t], &cache.y_hat[t]);
            let dz = &dy * &(y_hat - y_prev);
            let d_ay = (&dy * z) * &y_hat.mapv(|v| 1.0 - v * v);
            let mut dy_prev = &dy * &z.mapv(|v| 1.0 - v);
            let ry = r * y_prev;
            accumulate(grad, wy, uy, by, &d_ay, &xt, &ry.view());
            let d_ry = d_ay.dot(&view(p, uy));
            dy_prev += &(&d_ry * r);
            let d_ar = (&d_ry * y_prev) * &r.mapv(|v| v * (1.0 - v));
            accumulate(grad, wr, ur, br, &d_ar, &xt, &y_prev.view());
            general_mat_mul(1.0, &d_ar, &view(p, ur), 1.0, &mut dy_prev);
            let d_az = dz * &z.mapv(|v| v * (1.0 - v));
            accumulate(grad, wz, uz, bz, &d_az, &xt, &y_prev.view());
            general_mat_mul(1.0, &d_az, &view(p, uz), 1.0, &mut dy_prev);
            dy = dy_prev;
        }
    }

    fn head_backward(
        &self,
        layers: &[Layer],
        inputs: &[Array2<f64>],
        d_out: &Array2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        let mut da = d_out.clone();
        for (i, l) in layers.iter().enumerate().rev() {
            let a_in = &inputs[i];
            general_mat_mul(1.0, &da.t(), a_in, 1.0, &mut view_mut(grad, l.w));
            view1_mut(grad, l.b).scaled_add(1.0, &da.sum_axis(Axis(0)));
            let d_in = da.dot(&view(&self.params, l.w));
            da = if i > 0 { d_in * &a_in.mapv(|v| 1.0 - v * v) } else { d_in };
        }
        da
    }
}

fn accumulate(
    grad: &mut [f64],
    w: Block,
    u: Block,
    b: Block,
    da: &Array2<f64>,
    x: &ArrayView2<f64>,
    hidden_in: &ArrayView2<f64>,
) {
    general_mat_mul(1.0, &da.t(), x, 1.0, &mut view_mut(grad, w));
    general_mat_mul(1.0, &da.t(), hidden_in, 1.0, &mut view_mut(grad, u));
    view1_mut(grad, b).scaled_add(1.0, &da.sum_axis(Axis(0)));
}
