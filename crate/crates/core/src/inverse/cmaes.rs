//! (μ/μ_w, λ)-CMA-ES on a box, searching in coordinates normalized to
//! `[0, 1]^n`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::InverseError;

const MAX_RESAMPLES: usize = 100;
/// Clipping penalty per squared normalized distance, in units of the
/// generation's fitness spread (keeps ranking invariant to shifting or
/// positively scaling the objective).
const PENALTY: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesConfig {
    /// Population size; `None` uses `4 + floor(3 ln n)`.
    pub lambda: Option<usize>,
    /// Parent count; `None` uses `floor(λ/2)`.
    pub mu: Option<usize>,
    /// Initial step size as a fraction of the box width.
    pub sigma0: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Initial mean; box centre when `None`.
    pub x0: Option<Vec<f64>>,
    pub max_evals: usize,
    pub seed: u64,
    /// Stop as soon as the best cost reaches this value.
    pub target: Option<f64>,
    /// Objective evaluations per generation run on this many threads.
    pub workers: usize,
    /// Wall-clock cap; reaching it ends the run with [`CmaesStatus::Budget`].
    pub time_limit: Option<std::time::Duration>,
}

impl CmaesConfig {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        CmaesConfig {
            lambda: None,
            mu: None,
            sigma0: 0.3,
            lower,
            upper,
            x0: None,
            max_evals: 10_000,
            seed: 0,
            target: None,
            workers: 1,
            time_limit: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn resolved_lambda(&self) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(self.dim()))
    }

    pub fn resolved_mu(&self) -> usize {
        self.mu.unwrap_or(self.resolved_lambda() / 2)
    }

    pub fn validate(&self) -> Result<(), InverseError> {
        let bad = |m: String| Err(InverseError::Config(m));
        let n = self.dim();
        if n == 0 || self.upper.len() != n {
            return bad(format!("box bounds of lengths {} and {}", n, self.upper.len()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return bad("every box needs finite lower < upper".into());
        }
        let lambda = self.resolved_lambda();
        let mu = self.resolved_mu();
        if lambda < 4 {
            return bad(format!("λ = {lambda} < 4"));
        }
        if mu < 1 || mu > lambda / 2 {
            return bad(format!("μ = {mu} outside 1..={}", lambda / 2));
        }
        if !(self.sigma0 > 0.0 && self.sigma0 <= 1.0) {
            return bad(format!("σ0 = {} outside (0, 1]", self.sigma0));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n || x0.iter().zip(self.lower.iter().zip(&self.upper)).any(|(x, (l, u))| x < l || x > u) {
                return bad("x0 must lie inside the box".into());
            }
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }
}

pub fn default_lambda(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmaesStatus {
    /// Best cost reached the configured target.
    Target,
    /// Evaluation or wall-time budget exhausted.
    Budget,
    /// Step size or covariance collapsed.
    Converged,
}

#[derive(Debug, Clone)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    /// Best-so-far cost after each generation.
    pub history: Vec<f64>,
    pub evals: usize,
    pub generations: usize,
    pub status: CmaesStatus,
    /// Evaluation count at which the best-so-far cost first reached
    /// `target` (when one is configured).
    pub evals_to_target: Option<usize>,
    /// Every evaluated point in order, when requested.
    pub trace: Vec<Vec<f64>>,
}

/// Minimizes `objective` over the box. Evaluation order within a generation
/// is fixed, so results do not depend on `workers`.
pub fn cmaes_minimize<F>(objective: F, cfg: &CmaesConfig) -> Result<CmaesResult, InverseError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    run(objective, cfg, false)
}

/// As [`cmaes_minimize`], also recording every evaluated point.
pub fn cmaes_minimize_traced<F>(objective: F, cfg: &CmaesConfig) -> Result<CmaesResult, InverseError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    run(objective, cfg, true)
}

fn run<F>(objective: F, cfg: &CmaesConfig, trace_points: bool) -> Result<CmaesResult, InverseError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.dim();
    let nf = n as f64;
    let lambda = cfg.resolved_lambda();
    let mu = cfg.resolved_mu();
    let width: Vec<f64> = cfg.lower.iter().zip(&cfg.upper).map(|(l, u)| u - l).collect();
    let to_x = |y: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| cfg.lower[i] + y[i] * width[i]).collect() };

    let raw_w: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
    let sw: f64 = raw_w.iter().sum();
    let w: Vec<f64> = raw_w.iter().map(|v| v / sw).collect();
    let mu_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut mean = match &cfg.x0 {
        Some(x0) => DVector::from_fn(n, |i, _| (x0[i] - cfg.lower[i]) / width[i]),
        None => DVector::from_element(n, 0.5),
    };
    let mut sigma = cfg.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| InverseError::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let mut best_x = to_x(&mean);
    let mut best_f = f64::INFINITY;
    let mut history = Vec::new();
    let mut evals = 0;
    let mut evals_to_target = None;
    let mut trace = Vec::new();
    let mut generation = 0;
    let started = std::time::Instant::now();
    let status = loop {
        // Ask.
        let mut ys = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut y = DVector::zeros(n);
            for _ in 0..=MAX_RESAMPLES {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                y = &mean + sigma * (&b * d.component_mul(&z));
                if y.iter().all(|v| (0.0..=1.0).contains(v)) {
                    break;
                }
            }
            ys.push(y);
        }
        let clipped: Vec<DVector<f64>> = ys.iter().map(|y| y.map(|v| v.clamp(0.0, 1.0))).collect();
        let points: Vec<Vec<f64>> = clipped.iter().map(&to_x).collect();
        let eval = |p: &Vec<f64>| objective(p);
        let raw: Vec<f64> = match &pool {
            Some(pool) => pool.install(|| points.par_iter().map(eval).collect()),
            None => points.iter().map(eval).collect(),
        };
        evals += lambda;
        generation += 1;
        let finite = raw.iter().filter(|f| f.is_finite());
        let fmax = finite.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
        let fmin = finite.cloned().fold(f64::INFINITY, f64::min);
        let spread = if fmax > fmin { fmax - fmin } else { 1.0 };
        let fit: Vec<f64> = raw
            .iter()
            .zip(ys.iter().zip(&clipped))
            .map(|(&f, (y, c))| {
                let f = if f.is_nan() { f64::INFINITY } else { f };
                f + spread * PENALTY * (y - c).norm_squared()
            })
            .collect();
        for (i, &f) in raw.iter().enumerate() {
            if f < best_f {
                best_f = f;
                best_x = points[i].clone();
            }
        }
        if trace_points {
            trace.extend(points.iter().cloned());
        }
        history.push(best_f);
        if let Some(t) = cfg.target {
            if best_f <= t {
                evals_to_target.get_or_insert(evals);
                break CmaesStatus::Target;
            }
        }

        // Tell.
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let old = mean.clone();
        mean = DVector::zeros(n);
        for (i, &k) in order.iter().take(mu).enumerate() {
            mean += w[i] * &ys[k];
        }
        let y_w = (&mean - &old) / sigma;
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        p_sigma = (1.0 - c_sigma) * &p_sigma + (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - c_sigma).powi(2 * generation as i32)).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = (1.0 - c_c) * &p_c + hs * (c_c * (2.0 - c_c) * mu_eff).sqrt() * &y_w;
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (i, &k) in order.iter().take(mu).enumerate() {
            let z = (&ys[k] - &old) / sigma;
            rank_mu += w[i] * &z * z.transpose();
        }
        cov = (1.0 - c1 - c_mu) * &cov
            + c1 * (&p_c * p_c.transpose() + (1.0 - hs) * c_c * (2.0 - c_c) * &cov)
            + c_mu * rank_mu;
        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();

        cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone());
        b = eig.eigenvectors;
        d = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        if evals + lambda > cfg.max_evals || cfg.time_limit.is_some_and(|t| started.elapsed() >= t) {
            break CmaesStatus::Budget;
        }
        let dmax = d.max();
        let dmin = d.min();
        if sigma * dmax < 1e-15 || dmax / dmin > 1e7 || !sigma.is_finite() {
            break CmaesStatus::Converged;
        }
    };
    Ok(CmaesResult {
        best_x,
        best_f,
        history,
        evals,
        generations: generation,
        status,
        evals_to_target,
        trace,
    })
}
