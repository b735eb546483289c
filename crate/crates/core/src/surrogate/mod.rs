//! Dense feed-forward surrogate with hand-written reverse-mode gradients.
//!
//! Outputs are laid out channel-major over the model's band: for each of the
//! 12 real channels, `K_band` consecutive frequency points. The training
//! loss is the per-channel RMSE over frequency averaged over the 12 channels
//! (see [`loss_freq`]), evaluated on denormalized outputs.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ScalarOperand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rfnet::REAL_CHANNELS;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SubBandMeta, CHECKPOINT_EXT};
pub use train::{fit, Adam, EpochRecord, FitResult, TrainConfig};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("transfer between mismatched specs: {0}")]
    Transfer(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Floating-point type the network computes in.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn lift(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn lift(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                F::one() - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = SurrogateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(SurrogateError::Spec(format!("unknown activation '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self, SurrogateError> {
        let spec = MlpSpec { input_dim, hidden, output_dim, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(SurrogateError::Spec(format!("all dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Output width must cover whole frequency points of 12 real channels.
    pub fn k_band(&self) -> Result<usize, SurrogateError> {
        if self.output_dim % REAL_CHANNELS != 0 {
            return Err(SurrogateError::Spec(format!(
                "output_dim {} is not a multiple of {REAL_CHANNELS}",
                self.output_dim
            )));
        }
        Ok(self.output_dim / REAL_CHANNELS)
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Largest uniform hidden width whose parameter count stays within `budget`.
pub fn width_for_budget(input_dim: usize, depth: usize, output_dim: usize, budget: usize) -> usize {
    let count = |w: usize| {
        MlpSpec {
            input_dim,
            hidden: vec![w; depth],
            output_dim,
            activation: Activation::Relu,
        }
        .param_count()
    };
    let mut w = 1;
    while count(w + 1) <= budget {
        w += 1;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    /// `in x out`.
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

/// Per-feature input and per-output standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<F> {
    pub in_mean: Array1<F>,
    pub in_std: Array1<F>,
    pub out_mean: Array1<F>,
    pub out_std: Array1<F>,
    /// Digest of the rows the statistics were computed from (0 = identity).
    pub fingerprint: u64,
}

const STD_FLOOR: f64 = 1e-6;

fn column_stats<F: Scalar>(x: ArrayView2<'_, F>) -> (Array1<F>, Array1<F>) {
    let n = x.nrows().max(1) as f64;
    let cols = x.ncols();
    let mut mean = Array1::<F>::zeros(cols);
    let mut std = Array1::<F>::zeros(cols);
    for c in 0..cols {
        let col = x.column(c);
        let m = col.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        let var = col.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / n;
        mean[c] = F::lift(m);
        std[c] = F::lift(var.sqrt().max(STD_FLOOR));
    }
    (mean, std)
}

/// Digest of a set of (feature, label) rows.
pub fn fingerprint_rows<F: Scalar>(x: ArrayView2<'_, F>, y: ArrayView2<'_, F>) -> u64 {
    let mut h = Sha256::new();
    for (xr, yr) in x.outer_iter().zip(y.outer_iter()) {
        for v in xr.iter().chain(yr.iter()) {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl<F: Scalar> Normalizer<F> {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Normalizer {
            in_mean: Array1::zeros(input_dim),
            in_std: Array1::ones(input_dim),
            out_mean: Array1::zeros(output_dim),
            out_std: Array1::ones(output_dim),
            fingerprint: 0,
        }
    }

    pub fn fit(x: ArrayView2<'_, F>, y: ArrayView2<'_, F>) -> Self {
        let (in_mean, in_std) = column_stats(x);
        let (out_mean, out_std) = column_stats(y);
        Normalizer {
            in_mean,
            in_std,
            out_mean,
            out_std,
            fingerprint: fingerprint_rows(x, y),
        }
    }

    /// Keeps the input statistics, recomputes output statistics from `y`.
    pub fn with_outputs(&self, y: ArrayView2<'_, F>, fingerprint: u64) -> Self {
        let (out_mean, out_std) = column_stats(y);
        Normalizer {
            in_mean: self.in_mean.clone(),
            in_std: self.in_std.clone(),
            out_mean,
            out_std,
            fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<F> {
    spec: MlpSpec,
    layers: Vec<Layer<F>>,
    norm: Normalizer<F>,
    seed: u64,
}

/// Per-layer gradients, shaped like [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn flat(&self) -> Vec<F> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

impl<F: Scalar> MlpModel<F> {
    /// Seeded He (relu) or Xavier (tanh) uniform weights, zero biases,
    /// identity normalizer.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self, SurrogateError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = match spec.activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let dist = Uniform::new(-limit, limit).expect("finite limit");
                Layer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| F::lift(dist.sample(&mut rng))),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let norm = Normalizer::identity(spec.input_dim, spec.output_dim);
        Ok(MlpModel { spec, layers, norm, seed })
    }

    /// Assembles a model from explicit parts; shapes are checked.
    pub fn from_parts(spec: MlpSpec, layers: Vec<Layer<F>>, norm: Normalizer<F>, seed: u64) -> Result<Self, SurrogateError> {
        spec.validate()?;
        let dims = spec.dims();
        if layers.len() != dims.len() - 1 {
            return Err(SurrogateError::Dimension(format!(
                "{} layers for {} weight matrices",
                layers.len(),
                dims.len() - 1
            )));
        }
        for (i, (l, w)) in layers.iter().zip(dims.windows(2)).enumerate() {
            if l.weights.dim() != (w[0], w[1]) || l.bias.len() != w[1] {
                return Err(SurrogateError::Dimension(format!("layer {i} shape mismatch")));
            }
        }
        if norm.in_mean.len() != spec.input_dim
            || norm.in_std.len() != spec.input_dim
            || norm.out_mean.len() != spec.output_dim
            || norm.out_std.len() != spec.output_dim
        {
            return Err(SurrogateError::Dimension("normalizer shape mismatch".into()));
        }
        if norm.in_std.iter().chain(norm.out_std.iter()).any(|s| !(*s > F::zero())) {
            return Err(SurrogateError::Spec("normalizer std must be > 0".into()));
        }
        Ok(MlpModel { spec, layers, norm, seed })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn normalizer(&self) -> &Normalizer<F> {
        &self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer<F>) -> Result<(), SurrogateError> {
        if norm.in_mean.len() != self.spec.input_dim || norm.out_mean.len() != self.spec.output_dim {
            return Err(SurrogateError::Dimension("normalizer shape mismatch".into()));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// All weights and biases, layer by layer, weights row-major first.
    pub fn params_flat(&self) -> Vec<F> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, p: &[F]) -> Result<(), SurrogateError> {
        if p.len() != self.param_count() {
            return Err(SurrogateError::Dimension(format!(
                "{} parameters for a {}-parameter model",
                p.len(),
                self.param_count()
            )));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Adds seeded Gaussian noise of standard deviation `sigma` to every
    /// weight (biases untouched).
    pub fn add_weight_noise(&mut self, sigma: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, sigma).expect("sigma >= 0");
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *w + F::lift(dist.sample(&mut rng));
            }
        }
    }

    fn check_input(&self, x: ArrayView2<'_, F>) -> Result<(), SurrogateError> {
        if x.ncols() != self.spec.input_dim {
            return Err(SurrogateError::Dimension(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn normalize_input(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        (&x - &self.norm.in_mean) / &self.norm.in_std
    }

    /// Runs the affine/activation chain on normalized inputs, returning
    /// pre-activations per layer and the final (normalized) output.
    fn run(&self, a0: Array2<F>) -> (Vec<Array2<F>>, Vec<Array2<F>>) {
        let mut acts = vec![a0];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = acts.last().unwrap().dot(&l.weights) + &l.bias;
            if i < last {
                let act = self.spec.activation;
                acts.push(z.mapv(|v| act.apply(v)));
            }
            pre.push(z);
        }
        (pre, acts)
    }

    /// Output before denormalization.
    pub fn forward_normalized(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>, SurrogateError> {
        self.check_input(x)?;
        let (mut pre, _) = self.run(self.normalize_input(x));
        Ok(pre.pop().unwrap())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>, SurrogateError> {
        let z = self.forward_normalized(x)?;
        Ok(z * &self.norm.out_std + &self.norm.out_mean)
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, SurrogateError> {
        let row = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| SurrogateError::Dimension(e.to_string()))?;
        Ok(self.forward_batch(row)?.into_raw_vec_and_offset().0)
    }

    /// Batch [`loss_freq`] and its exact gradient with respect to every
    /// weight and bias.
    pub fn gradients(&self, x: ArrayView2<'_, F>, y: ArrayView2<'_, F>) -> Result<(f64, Gradients<F>), SurrogateError> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(SurrogateError::EmptyBatch);
        }
        if y.dim() != (x.nrows(), self.spec.output_dim) {
            return Err(SurrogateError::Dimension(format!(
                "labels {:?}, expected ({}, {})",
                y.dim(),
                x.nrows(),
                self.spec.output_dim
            )));
        }
        let k_band = self.spec.k_band()?;
        let (pre, acts) = self.run(self.normalize_input(x));
        let pred = pre.last().unwrap() * &self.norm.out_std + &self.norm.out_mean;
        let (loss, dpred) = loss_and_grad(pred.view(), y, k_band);
        let mut delta = dpred * &self.norm.out_std;
        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let a_prev = &acts[li];
            let gw = a_prev.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let act = self.spec.activation;
                let mut d = delta.dot(&self.layers[li].weights.t());
                d.zip_mut_with(&pre[li - 1], |g, &z| *g = *g * act.derivative(z));
                delta = d;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Mean [`loss_freq`] over a set, evaluated in chunks.
    pub fn loss(&self, x: ArrayView2<'_, F>, y: ArrayView2<'_, F>) -> Result<f64, SurrogateError> {
        let k_band = self.spec.k_band()?;
        let n = x.nrows();
        if n == 0 {
            return Err(SurrogateError::EmptyBatch);
        }
        let mut total = 0.0;
        for start in (0..n).step_by(512) {
            let end = (start + 512).min(n);
            let p = self.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
            total += batch_loss(p.view(), y.slice(ndarray::s![start..end, ..]), k_band)? * (end - start) as f64;
        }
        Ok(total / n as f64)
    }
}

/// Per-sample loss: `(1/12) Σ_n sqrt((1/K) Σ_k (S_nk − Ŝ_nk)²)` over the 12
/// channel-major real channels.
pub fn loss_freq<F: Scalar>(pred: &[F], label: &[F], k_band: usize) -> Result<f64, SurrogateError> {
    let expected = REAL_CHANNELS * k_band;
    if pred.len() != expected || label.len() != expected {
        return Err(SurrogateError::Dimension(format!(
            "pred {} / label {} values, expected {expected}",
            pred.len(),
            label.len()
        )));
    }
    let mut total = 0.0;
    for n in 0..REAL_CHANNELS {
        let sse: f64 = (0..k_band)
            .map(|k| {
                let i = n * k_band + k;
                (pred[i].as_f64() - label[i].as_f64()).powi(2)
            })
            .sum();
        total += (sse / k_band as f64).sqrt();
    }
    Ok(total / REAL_CHANNELS as f64)
}

/// Mean of [`loss_freq`] over the rows of a batch.
pub fn batch_loss<F: Scalar>(pred: ArrayView2<'_, F>, label: ArrayView2<'_, F>, k_band: usize) -> Result<f64, SurrogateError> {
    if pred.dim() != label.dim() {
        return Err(SurrogateError::Dimension(format!("{:?} vs {:?}", pred.dim(), label.dim())));
    }
    if pred.nrows() == 0 {
        return Err(SurrogateError::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, l) in pred.outer_iter().zip(label.outer_iter()) {
        let p = p.to_vec();
        let l = l.to_vec();
        total += loss_freq(&p, &l, k_band)?;
    }
    Ok(total / pred.nrows() as f64)
}

/// Batch loss and `dL/dpred`. Channels with zero error contribute a zero
/// subgradient.
fn loss_and_grad<F: Scalar>(pred: ArrayView2<'_, F>, label: ArrayView2<'_, F>, k_band: usize) -> (f64, Array2<F>) {
    let b = pred.nrows();
    let mut grad = Array2::<F>::zeros(pred.dim());
    let mut total = 0.0;
    let scale = 1.0 / (b as f64 * REAL_CHANNELS as f64 * k_band as f64);
    for s in 0..b {
        let p = pred.row(s);
        let l = label.row(s);
        let mut g = grad.row_mut(s);
        for n in 0..REAL_CHANNELS {
            let range = n * k_band..(n + 1) * k_band;
            let sse: f64 = range
                .clone()
                .map(|i| (p[i].as_f64() - l[i].as_f64()).powi(2))
                .sum();
            let rmse = (sse / k_band as f64).sqrt();
            total += rmse;
            if rmse > 0.0 {
                let c = scale / rmse;
                for i in range {
                    g[i] = F::lift(c * (p[i].as_f64() - l[i].as_f64()));
                }
            }
        }
    }
    (total / (b as f64 * REAL_CHANNELS as f64), grad)
}

/// Output slice `[lo, hi)` of each channel in a full-band packed row of
/// `k_total` points: the columns a sub-band model predicts.
pub fn band_columns(k_total: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..REAL_CHANNELS)
        .flat_map(|c| (c * k_total + lo)..(c * k_total + hi))
        .collect()
}

/// Collects band columns from full-band label rows.
pub fn select_band(labels: ArrayView2<'_, f32>, k_total: usize, lo: usize, hi: usize) -> Array2<f32> {
    labels.select(Axis(1), &band_columns(k_total, lo, hi))
}

/// A model responsible for grid indices `[lo, hi)` (band number `index`,
/// counted from 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SubBandModel {
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
    /// Frequency range `(lo_ghz, hi_ghz]` covered by the band.
    pub range_ghz: (f64, f64),
    pub model: MlpModel<f32>,
}

impl SubBandModel {
    pub fn k_band(&self) -> usize {
        self.hi - self.lo
    }
}

/// Warm start: `dst` receives a value copy of `src`'s weights and biases;
/// its output statistics are recomputed from its own band labels.
pub fn init_from(
    dst: &SubBandModel,
    src: &SubBandModel,
    dst_train_x: ArrayView2<'_, f32>,
    dst_train_labels: ArrayView2<'_, f32>,
) -> Result<SubBandModel, SurrogateError> {
    if dst.model.spec != src.model.spec {
        return Err(SurrogateError::Transfer(format!(
            "band {} spec {:?} vs band {} spec {:?}",
            dst.index, dst.model.spec, src.index, src.model.spec
        )));
    }
    if dst_train_labels.ncols() != dst.model.spec.output_dim {
        return Err(SurrogateError::Dimension(format!(
            "band labels have {} columns, model outputs {}",
            dst_train_labels.ncols(),
            dst.model.spec.output_dim
        )));
    }
    let fingerprint = fingerprint_rows(dst_train_x, dst_train_labels);
    let norm = src.model.norm.with_outputs(dst_train_labels, fingerprint);
    Ok(SubBandModel {
        model: MlpModel {
            spec: src.model.spec.clone(),
            layers: src.model.layers.clone(),
            norm,
            seed: dst.model.seed,
        },
        ..dst.clone()
    })
}

/// View helper for single rows.
pub fn row_of(x: &Array2<f32>, i: usize) -> ArrayView1<'_, f32> {
    x.row(i)
}
