use ndarray::{ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Layer, MlpModel, Normalizer, Scalar, SurrogateError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Seeds minibatch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

/// Adam moment state for one model.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<Layer<F>>,
    v: Vec<Layer<F>>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(model: &MlpModel<F>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Layer<F>> = model
            .layers
            .iter()
            .map(|l| Layer {
                weights: ndarray::Array2::zeros(l.weights.dim()),
                bias: ndarray::Array1::zeros(l.bias.len()),
            })
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, model: &mut MlpModel<F>, g: &Gradients<F>) {
        self.t += 1;
        let b1 = F::lift(self.beta1);
        let b2 = F::lift(self.beta2);
        let one = F::one();
        let c1 = F::lift(1.0 - self.beta1.powi(self.t));
        let c2 = F::lift(1.0 - self.beta2.powi(self.t));
        let lr = F::lift(self.lr);
        let eps = F::lift(self.eps);
        let update = |p: &mut F, m: &mut F, v: &mut F, &g: &F| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - lr * mh / (vh.sqrt() + eps);
        };
        for (((p, m), v), g) in model
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(&g.layers)
        {
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult<F> {
    /// Weights from the epoch with the lowest validation loss.
    pub model: MlpModel<F>,
    pub history: Vec<EpochRecord>,
    /// `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val: f64,
    pub stopped_early: bool,
}

/// Minibatch Adam on [`super::loss_freq`] with early stopping on the
/// validation loss. The normalizer is refit on the training rows before the
/// first epoch; `epochs = 0` returns the model untouched. An empty
/// validation set falls back to the training loss for model selection.
pub fn fit<F: Scalar>(
    model: &MlpModel<F>,
    train_x: ArrayView2<'_, F>,
    train_y: ArrayView2<'_, F>,
    val_x: ArrayView2<'_, F>,
    val_y: ArrayView2<'_, F>,
    cfg: &TrainConfig,
) -> Result<FitResult<F>, SurrogateError> {
    cfg.validate()?;
    model.spec.k_band()?;
    let out = model.spec.output_dim;
    if train_y.ncols() != out || val_y.ncols() != out {
        return Err(SurrogateError::Dimension(format!(
            "label width {} / {}, model outputs {out}",
            train_y.ncols(),
            val_y.ncols()
        )));
    }
    if train_x.nrows() != train_y.nrows() || val_x.nrows() != val_y.nrows() {
        return Err(SurrogateError::Dimension("feature/label row counts differ".into()));
    }
    if cfg.epochs == 0 {
        return Ok(FitResult {
            model: model.clone(),
            history: Vec::new(),
            best_epoch: None,
            best_val: f64::NAN,
            stopped_early: false,
        });
    }
    let n = train_x.nrows();
    if n == 0 {
        return Err(SurrogateError::EmptyBatch);
    }
    let mut model = model.clone();
    model.norm = Normalizer::fit(train_x, train_y);
    let mut adam = Adam::new(&model, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.layers.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = train_x.select(Axis(0), chunk);
            let yb = train_y.select(Axis(0), chunk);
            let (loss, g) = model.gradients(xb.view(), yb.view())?;
            if !loss.is_finite() {
                return Err(SurrogateError::Diverged { epoch });
            }
            sum += loss * chunk.len() as f64;
            adam.step(&mut model, &g);
        }
        let train_loss = sum / n as f64;
        let val_loss = if val_x.nrows() > 0 {
            model.loss(val_x, val_y)?
        } else {
            model.loss(train_x, train_y)?
        };
        if !val_loss.is_finite() {
            return Err(SurrogateError::Diverged { epoch });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.layers.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    model.layers = best.2;
    Ok(FitResult {
        model,
        history,
        best_epoch: Some(best.1),
        best_val: best.0,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Activation, MlpSpec};
    use ndarray::Array2;

    fn toy(n: usize, seed: u64) -> (Array2<f32>, Array2<f32>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0f32..1.0));
        let y = Array2::from_shape_fn((n, 24), |(i, j)| {
            let r = x.row(i);
            (r[j % 6] * 0.5 + r[(j + 1) % 6] * r[(j + 2) % 6]).sin() * 0.3
        });
        (x, y)
    }

    fn small() -> MlpModel<f32> {
        MlpModel::new(MlpSpec::new(6, vec![32, 32], 24, Activation::Tanh).unwrap(), 11).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (x, y) = toy(20, 1);
        let m = small();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let r = fit(&m, x.view(), y.view(), x.view(), y.view(), &cfg).unwrap();
        assert_eq!(r.model, m);
        assert!(r.history.is_empty());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (x, y) = toy(256, 2);
        let (vx, vy) = toy(64, 3);
        let cfg = TrainConfig { epochs: 300, batch_size: 32, lr: 3e-3, ..Default::default() };
        let a = fit(&small(), x.view(), y.view(), vx.view(), vy.view(), &cfg).unwrap();
        let b = fit(&small(), x.view(), y.view(), vx.view(), vy.view(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let mean = y.mean_axis(Axis(0)).unwrap();
        let constant = Array2::from_shape_fn(vy.dim(), |(_, j)| mean[j]);
        let baseline = crate::surrogate::batch_loss(constant.view(), vy.view(), 2).unwrap();
        assert!(a.best_val < 0.25 * baseline, "{baseline} -> {}", a.best_val);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        assert_eq!(a.model.normalizer().fingerprint, crate::surrogate::fingerprint_rows(x.view(), y.view()));
        assert!((a.model.loss(vx.view(), vy.view()).unwrap() - a.best_val).abs() < 1e-9);
    }

    #[test]
    fn early_stopping_honours_patience() {
        let (x, y) = toy(64, 4);
        let (vx, _) = toy(32, 5);
        // Validation labels unrelated to the inputs: improvement stalls.
        let vy = Array2::from_elem((32, 24), 5.0f32);
        let cfg = TrainConfig { epochs: 500, patience: 3, ..Default::default() };
        let r = fit(&small(), x.view(), y.view(), vx.view(), vy.view(), &cfg).unwrap();
        assert!(r.stopped_early);
        assert_eq!(r.history.len(), r.best_epoch.unwrap() + 3);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, mut y) = toy(16, 6);
        y[[0, 0]] = f32::NAN;
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        assert!(matches!(
            fit(&small(), x.view(), y.view(), x.view(), y.view(), &cfg),
            Err(SurrogateError::Diverged { epoch: 1 })
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let (x, y) = toy(8, 7);
        let cfg = TrainConfig { lr: 0.0, epochs: 1, ..Default::default() };
        assert!(matches!(
            fit(&small(), x.view(), y.view(), x.view(), y.view(), &cfg),
            Err(SurrogateError::Config(_))
        ));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = small();
        let before = m.params_flat();
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&m, &cfg);
        let mut g = Gradients { layers: m.layers.clone() };
        for l in &mut g.layers {
            l.weights.fill(2.0);
            l.bias.fill(-0.5);
        }
        adam.step(&mut m, &g);
        for ((b, a), gv) in before.iter().zip(m.params_flat()).zip(g.flat()) {
            let expected = -1e-3 * gv.signum();
            assert!(((a - b) - expected).abs() < 1e-6);
        }
        assert_eq!(adam.steps(), 1);
    }
}
