//! Accuracy metrics over packed prediction/label matrices (one row per
//! sample, `12·K` channel-major reals).

use std::fmt::Write as _;

use ndarray::ArrayView2;
use thiserror::Error;

use crate::rfnet::{detect_srf, FrequencyGrid, SParamTensor, REAL_CHANNELS};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: preds {preds:?}, labels {labels:?}")]
    Shape { preds: (usize, usize), labels: (usize, usize) },
    #[error("rows have {got} values, grid of {k} points needs {}", 12 * k)]
    Width { got: usize, k: usize },
    #[error("frequency index {index} outside 1..={k}")]
    Range { index: usize, k: usize },
    #[error("labels have zero variance")]
    ZeroVariance,
    #[error("empty test set")]
    Empty,
    #[error("{got} SRF values for {samples} samples")]
    SrfCount { got: usize, samples: usize },
}

fn check(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>, k: usize) -> Result<(), MetricsError> {
    if preds.dim() != labels.dim() {
        return Err(MetricsError::Shape { preds: preds.dim(), labels: labels.dim() });
    }
    if preds.ncols() != REAL_CHANNELS * k {
        return Err(MetricsError::Width { got: preds.ncols(), k });
    }
    if preds.nrows() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn abs_err_at(p: ArrayView2<'_, f32>, l: ArrayView2<'_, f32>, s: usize, k_total: usize, k: usize) -> f64 {
    (0..REAL_CHANNELS)
        .map(|c| {
            let i = c * k_total + k;
            (p[[s, i]] as f64 - l[[s, i]] as f64).abs()
        })
        .sum()
}

/// Mean over samples and the 12 real channels of `|pred - label|` at grid
/// index `k`.
pub fn mae_freq(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>, k_total: usize, k: usize) -> Result<f64, MetricsError> {
    check(preds, labels, k_total)?;
    if k >= k_total {
        return Err(MetricsError::Range { index: k + 1, k: k_total });
    }
    let n = preds.nrows();
    let total: f64 = (0..n).map(|s| abs_err_at(preds, labels, s, k_total, k)).sum();
    Ok(total / (n * REAL_CHANNELS) as f64)
}

/// [`mae_freq`] at every grid index.
pub fn mae_curve(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>, k_total: usize) -> Result<Vec<f64>, MetricsError> {
    (0..k_total).map(|k| mae_freq(preds, labels, k_total, k)).collect()
}

/// Mean of [`mae_freq`] over indices `0..k_max`.
pub fn mae_avg(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>, k_total: usize, k_max: usize) -> Result<f64, MetricsError> {
    if k_max == 0 || k_max > k_total {
        return Err(MetricsError::Range { index: k_max, k: k_total });
    }
    let curve = (0..k_max)
        .map(|k| mae_freq(preds, labels, k_total, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(curve.iter().sum::<f64>() / k_max as f64)
}

/// Number of leading grid points with `f <= min(2·srf, f_max)`; at least 1.
pub fn points_below_2srf(grid: &FrequencyGrid, srf_ghz: f64) -> usize {
    let cap = (2.0 * srf_ghz).min(grid.f_max());
    let tol = 1e-9 * grid.f_step;
    (0..grid.k).take_while(|&k| grid.freq_ghz(k) <= cap + tol).count().max(1)
}

/// Per sample, mean absolute error over grid points up to twice that
/// sample's SRF (capped at `f_max`); then averaged over samples.
pub fn mae_avg_2srf(
    preds: ArrayView2<'_, f32>,
    labels: ArrayView2<'_, f32>,
    grid: &FrequencyGrid,
    srf_ghz: &[f64],
) -> Result<f64, MetricsError> {
    check(preds, labels, grid.k)?;
    let n = preds.nrows();
    if srf_ghz.len() != n {
        return Err(MetricsError::SrfCount { got: srf_ghz.len(), samples: n });
    }
    let mut total = 0.0;
    for (s, &srf) in srf_ghz.iter().enumerate() {
        let kmax = points_below_2srf(grid, srf);
        let err: f64 = (0..kmax).map(|k| abs_err_at(preds, labels, s, grid.k, k)).sum();
        total += err / (kmax * REAL_CHANNELS) as f64;
    }
    Ok(total / n as f64)
}

/// `1 - SS_res/SS_tot` pooled over every sample, channel and frequency.
pub fn r_squared(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>) -> Result<f64, MetricsError> {
    if preds.dim() != labels.dim() {
        return Err(MetricsError::Shape { preds: preds.dim(), labels: labels.dim() });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = labels.len() as f64;
    let mean = labels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ss_tot: f64 = labels.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let ss_res: f64 = preds
        .iter()
        .zip(labels.iter())
        .map(|(&p, &l)| (p as f64 - l as f64).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// SRF of every label row (GHz) and how many fell back to `f_max/2`.
pub fn label_srfs(labels: ArrayView2<'_, f32>, grid: &FrequencyGrid) -> Result<(Vec<f64>, usize), MetricsError> {
    if labels.ncols() != REAL_CHANNELS * grid.k {
        return Err(MetricsError::Width { got: labels.ncols(), k: grid.k });
    }
    let mut out = Vec::with_capacity(labels.nrows());
    let mut fallbacks = 0;
    for row in labels.outer_iter() {
        let t = SParamTensor::unpack_f32(&row.to_vec(), *grid).expect("width checked");
        let srf = detect_srf(&t);
        if !srf.found {
            fallbacks += 1;
        }
        out.push(srf.ghz);
    }
    Ok((out, fallbacks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub grid: FrequencyGrid,
    pub mae_curve: Vec<f64>,
    pub mae_avg_full: f64,
    pub mae_avg_2srf: f64,
    pub r2: f64,
    pub samples: usize,
    pub srfs_ghz: Vec<f64>,
    pub srf_fallbacks: usize,
}

impl EvalReport {
    pub fn evaluate(preds: ArrayView2<'_, f32>, labels: ArrayView2<'_, f32>, grid: &FrequencyGrid) -> Result<Self, MetricsError> {
        check(preds, labels, grid.k)?;
        let (srfs, fallbacks) = label_srfs(labels, grid)?;
        let curve = mae_curve(preds, labels, grid.k)?;
        Ok(EvalReport {
            grid: *grid,
            mae_avg_full: curve.iter().sum::<f64>() / grid.k as f64,
            mae_curve: curve,
            mae_avg_2srf: mae_avg_2srf(preds, labels, grid, &srfs)?,
            r2: r_squared(preds, labels)?,
            samples: preds.nrows(),
            srfs_ghz: srfs,
            srf_fallbacks: fallbacks,
        })
    }

    /// `f_GHz,MAE_freq` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("f_GHz,MAE_freq\n");
        for (k, v) in self.mae_curve.iter().enumerate() {
            let _ = writeln!(s, "{},{:.9e}", self.grid.freq_ghz(k), v);
        }
        s
    }

    pub fn summary(&self) -> String {
        let srf_min = self.srfs_ghz.iter().cloned().fold(f64::INFINITY, f64::min);
        let srf_max = self.srfs_ghz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let srf_mean = self.srfs_ghz.iter().sum::<f64>() / self.srfs_ghz.len().max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "grid={}", self.grid);
        let _ = writeln!(s, "mae_avg_full={:.6e}", self.mae_avg_full);
        let _ = writeln!(s, "mae_avg_2srf={:.6e}", self.mae_avg_2srf);
        let _ = writeln!(s, "r2={:.6}", self.r2);
        let _ = writeln!(s, "srf_ghz_min={srf_min:.3}");
        let _ = writeln!(s, "srf_ghz_mean={srf_mean:.3}");
        let _ = writeln!(s, "srf_ghz_max={srf_max:.3}");
        let _ = writeln!(s, "srf_fallbacks={}", self.srf_fallbacks);
        s
    }
}

/// Side-by-side table of two reports with relative error reduction of `b`
/// over `a` (positive = `b` is better).
pub fn comparison_table(a_name: &str, a: &EvalReport, b_name: &str, b: &EvalReport) -> String {
    let red = |x: f64, y: f64| 100.0 * (x - y) / x;
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>14} {:>14} {:>10}", "metric", a_name, b_name, "reduction");
    let _ = writeln!(
        s,
        "{:<16} {:>14.6e} {:>14.6e} {:>9.1}%",
        "MAE_avg_full",
        a.mae_avg_full,
        b.mae_avg_full,
        red(a.mae_avg_full, b.mae_avg_full)
    );
    let _ = writeln!(
        s,
        "{:<16} {:>14.6e} {:>14.6e} {:>9.1}%",
        "MAE_avg_2SRF",
        a.mae_avg_2srf,
        b.mae_avg_2srf,
        red(a.mae_avg_2srf, b.mae_avg_2srf)
    );
    let _ = writeln!(s, "{:<16} {:>14.6} {:>14.6} {:>10}", "R2", a.r2, b.r2, "");
    s
}
