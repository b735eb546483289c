//! Impedance-matching inverse design: windowed cost over the differential
//! two-port of a transformer plus two shunt capacitors, minimized with
//! CMA-ES over a surrogate and checked against the oracle.

mod cmaes;
mod design;

use std::f64::consts::LN_2;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{XfmrGeometry, XfmrTemplate};
use crate::oracle::{simulate, OracleError};
use crate::rfnet::{
    add_shunt_caps, gamma_in, loss_mag, mixed_mode_reduce, s_to_y, y_to_s, ComplexPortSpec, FrequencyGrid, Mat2, Mat4,
    RfError, SParamTensor, Z0, Z_DIFF,
};
use crate::transfer::{BandEnsemble, TransferError};

pub use cmaes::{cmaes_minimize, cmaes_minimize_traced, default_lambda, CmaesConfig, CmaesResult, CmaesStatus};
pub use design::{
    inverse_design, verify_with_oracle, DesignConfig, DesignReport, DesignStatus, Verification, GAMMA_DB_FLOOR,
    MATCH_THRESHOLD_DB,
};

/// Upper bound for either shunt capacitor, femtofarads.
pub const C_MAX_FF: f64 = 500.0;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("invalid target: {0}")]
    Target(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("candidate {candidate}: {source}")]
    Candidate {
        candidate: String,
        #[source]
        source: Box<InverseError>,
    },
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("template mismatch: ensemble trained on {trained}, design asks for {asked}")]
    TemplateMismatch { trained: String, asked: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchTarget {
    pub ports: ComplexPortSpec,
    pub fc_ghz: f64,
    pub bw_ghz: f64,
    pub rho: u32,
}

impl MatchTarget {
    pub fn new(z01: Complex64, z02: Complex64, fc_ghz: f64, bw_ghz: f64, rho: u32) -> Result<Self, InverseError> {
        let ports = ComplexPortSpec::new(z01, z02)?;
        if !(bw_ghz > 0.0) || !fc_ghz.is_finite() || rho == 0 {
            return Err(InverseError::Target(format!("need Ω > 0 and ρ >= 1, got Ω = {bw_ghz}, ρ = {rho}")));
        }
        Ok(MatchTarget { ports, fc_ghz, bw_ghz, rho })
    }

    /// The band `[fc − Ω/2, fc + Ω/2]` must sit strictly inside the grid.
    pub fn check_grid(&self, grid: &FrequencyGrid) -> Result<(), InverseError> {
        let (lo, hi) = self.band();
        if !(lo > grid.f_start && hi < grid.f_max()) {
            return Err(InverseError::Target(format!(
                "band [{lo}, {hi}] GHz must lie inside ({}, {}) GHz",
                grid.f_start,
                grid.f_max()
            )));
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        (self.fc_ghz - self.bw_ghz / 2.0, self.fc_ghz + self.bw_ghz / 2.0)
    }

    pub fn in_band(&self, f_ghz: f64) -> bool {
        let (lo, hi) = self.band();
        let tol = 1e-9 * self.bw_ghz;
        f_ghz >= lo - tol && f_ghz <= hi + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    /// Per mm² of layout area.
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w0: 1.0, w1: 1.0, w2: 1.0 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), InverseError> {
        if [self.w0, self.w1, self.w2].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(InverseError::Weights(format!("weights must be finite and >= 0: {self:?}")));
        }
        if self.w1 == 0.0 && self.w2 == 0.0 {
            return Err(InverseError::Weights("at least one of w1, w2 must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub geometry: XfmrGeometry,
    pub c1_ff: f64,
    pub c2_ff: f64,
}

impl MatchCandidate {
    pub fn validate(&self, c_max_ff: f64) -> Result<(), InverseError> {
        for c in [self.c1_ff, self.c2_ff] {
            if !(0.0..=c_max_ff).contains(&c) {
                return Err(InverseError::Config(format!("capacitance {c} fF outside [0, {c_max_ff}]")));
            }
        }
        self.geometry
            .validate()
            .map_err(|e| InverseError::Config(e.to_string()))
    }

    fn echo(&self) -> String {
        let g = &self.geometry;
        format!(
            "{} {}:{} outer={:.3} width={:.3} spacing={:.3} gap={:.3} C1={:.2}fF C2={:.2}fF",
            g.template.name(),
            g.turns_primary,
            g.turns_secondary,
            g.outer_dim,
            g.trace_width,
            g.trace_spacing,
            g.winding_gap,
            self.c1_ff,
            self.c2_ff
        )
    }
}

/// Super-Gaussian window: 1 at `fc`, 1/2 at `fc ± Ω/2`, flatter for larger ρ.
pub fn window(f_ghz: f64, target: &MatchTarget) -> f64 {
    let x = 2.0 * (f_ghz - target.fc_ghz).abs() / target.bw_ghz;
    (-LN_2 * x.powi(2 * target.rho as i32)).exp()
}

/// Something that maps a geometry to a 4-port S-parameter tensor.
pub trait Backend: Sync {
    fn name(&self) -> &str;
    fn grid(&self) -> FrequencyGrid;
    fn sparams(&self, g: &XfmrGeometry) -> Result<SParamTensor, InverseError>;
    /// Template the backend was trained on, if it is restricted to one.
    fn template(&self) -> Option<XfmrTemplate> {
        None
    }
}

/// Exact lumped oracle.
pub struct OracleBackend {
    pub grid: FrequencyGrid,
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }
    fn grid(&self) -> FrequencyGrid {
        self.grid
    }
    fn sparams(&self, g: &XfmrGeometry) -> Result<SParamTensor, InverseError> {
        Ok(simulate(g, &self.grid)?)
    }
}

/// Trained sub-band ensemble.
pub struct SurrogateBackend<'a> {
    pub ensemble: &'a BandEnsemble,
}

impl Backend for SurrogateBackend<'_> {
    fn name(&self) -> &str {
        "surrogate"
    }
    fn grid(&self) -> FrequencyGrid {
        self.ensemble.grid
    }
    fn sparams(&self, g: &XfmrGeometry) -> Result<SParamTensor, InverseError> {
        let x: Vec<f32> = g.feature_vector().iter().map(|&v| v as f32).collect();
        Ok(self.ensemble.predict_full(&x)?)
    }
    fn template(&self) -> Option<XfmrTemplate> {
        self.ensemble.template
    }
}

/// `|Γ_in|` and `|L|` per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCurves {
    pub freqs_ghz: Vec<f64>,
    pub gamma: Vec<f64>,
    pub loss: Vec<f64>,
}

pub fn to_db(mag: f64) -> f64 {
    20.0 * mag.max(1e-300).log10()
}

/// Differential two-port at grid index `k` with the shunt capacitors added.
pub fn loaded_sdd(t: &SParamTensor, k: usize, c1_ff: f64, c2_ff: f64) -> Result<Mat2, RfError> {
    let sdd = mixed_mode_reduce(&t.expand_full(k)?);
    add_shunt_caps(&sdd, t.grid().omega(k), c1_ff * 1e-15, c2_ff * 1e-15).map_err(|e| e.at(k))
}

pub fn curves_from_tensor(t: &SParamTensor, c1_ff: f64, c2_ff: f64, ports: &ComplexPortSpec) -> Result<MatchCurves, RfError> {
    let grid = t.grid();
    let mut gamma = Vec::with_capacity(grid.k);
    let mut loss = Vec::with_capacity(grid.k);
    for k in 0..grid.k {
        let sdd = loaded_sdd(t, k, c1_ff, c2_ff)?;
        gamma.push(gamma_in(&sdd, ports).map_err(|e| e.at(k))?.norm());
        loss.push(loss_mag(&sdd, ports).map_err(|e| e.at(k))?);
    }
    Ok(MatchCurves { freqs_ghz: grid.freqs_ghz().collect(), gamma, loss })
}

pub fn match_curves(c: &MatchCandidate, target: &MatchTarget, backend: &dyn Backend) -> Result<MatchCurves, InverseError> {
    let wrap = |e: InverseError| InverseError::Candidate { candidate: c.echo(), source: Box::new(e) };
    let t = backend.sparams(&c.geometry).map_err(wrap)?;
    curves_from_tensor(&t, c.c1_ff, c.c2_ff, &target.ports).map_err(|e| wrap(e.into()))
}

/// `w0·A + Σ_f w_f·(w1·|Γ_in| + w2·(1 − |L|))` from precomputed curves.
pub fn cost_from_curves(curves: &MatchCurves, window_weights: &[f64], area_mm2: f64, w: &CostWeights) -> f64 {
    let band: f64 = window_weights
        .iter()
        .zip(curves.gamma.iter().zip(&curves.loss))
        .map(|(wf, (g, l))| wf * (w.w1 * g + w.w2 * (1.0 - l)))
        .sum();
    w.w0 * area_mm2 + band
}

pub fn window_weights(grid: &FrequencyGrid, target: &MatchTarget) -> Vec<f64> {
    grid.freqs_ghz().map(|f| window(f, target)).collect()
}

pub fn cost_js(c: &MatchCandidate, target: &MatchTarget, weights: &CostWeights, backend: &dyn Backend) -> Result<f64, InverseError> {
    let curves = match_curves(c, target, backend)?;
    let ww = window_weights(&backend.grid(), target);
    Ok(cost_from_curves(&curves, &ww, c.geometry.area_mm2(), weights))
}

/// Source and load impedances (reference `Z_DIFF`) that simultaneously
/// conjugate-match a two-port. `None` when the two-port is not
/// unconditionally stable.
pub fn conjugate_match(s: &Mat2) -> Option<ComplexPortSpec> {
    let (s11, s12, s21, s22) = (s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
    let delta = s11 * s22 - s12 * s21;
    let side = |a: Complex64, b: Complex64| -> Option<Complex64> {
        let bb = 1.0 + a.norm_sqr() - b.norm_sqr() - delta.norm_sqr();
        let c = a - delta * b.conj();
        let disc = bb * bb - 4.0 * c.norm_sqr();
        if disc <= 0.0 || c.norm() == 0.0 {
            return None;
        }
        Some((bb - bb.signum() * disc.sqrt()) / (2.0 * c))
    };
    let gs = side(s11, s22)?;
    let gl = side(s22, s11)?;
    let one = Complex64::from(1.0);
    let z = |g: Complex64| Z_DIFF * (one + g) / (one - g);
    ComplexPortSpec::new(z(gs), z(gl)).ok()
}

/// Folds the two shunt capacitors into the single-ended 4-port: `C1` across
/// ports 1-2 and `C2` across ports 3-4.
pub fn network_with_caps(t: &SParamTensor, c1_ff: f64, c2_ff: f64) -> Result<SParamTensor, RfError> {
    let grid = *t.grid();
    let full = (0..grid.k)
        .map(|k| {
            let mut y: Mat4 = s_to_y(&t.expand_full(k)?, Z0).map_err(|e| e.at(k))?;
            let w = grid.omega(k);
            for (a, b, c) in [(0, 1, c1_ff), (2, 3, c2_ff)] {
                let yc = Complex64::new(0.0, w * c * 1e-15);
                y[(a, a)] += yc;
                y[(b, b)] += yc;
                y[(a, b)] -= yc;
                y[(b, a)] -= yc;
            }
            y_to_s(&y, Z0).map_err(|e| e.at(k))
        })
        .collect::<Result<Vec<_>, _>>()?;
    SParamTensor::from_full(grid, &full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::XfmrTemplate;

    fn target(rho: u32) -> MatchTarget {
        MatchTarget::new(Complex64::new(40.0, -50.0), Complex64::new(150.0, 80.0), 45.0, 10.0, rho).unwrap()
    }

    fn g12() -> XfmrGeometry {
        XfmrGeometry {
            template: XfmrTemplate::MToN,
            turns_primary: 1,
            turns_secondary: 2,
            outer_dim: 100.0,
            trace_width: 6.0,
            trace_spacing: 4.0,
            winding_gap: 3.0,
        }
    }

    #[test]
    fn window_shape() {
        for rho in 1..6 {
            let t = target(rho);
            assert_eq!(window(45.0, &t), 1.0);
            assert!((window(40.0, &t) - 0.5).abs() < 1e-12);
            assert!((window(50.0, &t) - 0.5).abs() < 1e-12);
            let mut prev = 1.0;
            for i in 0..100 {
                let d = i as f64 * 0.3;
                let a = window(45.0 + d, &t);
                assert!((a - window(45.0 - d, &t)).abs() < 1e-12);
                assert!(a <= prev);
                prev = a;
            }
        }
        assert!(window(47.5, &target(30)) > 0.999);
    }

    #[test]
    fn hand_evaluated_cost() {
        let curves = MatchCurves {
            freqs_ghz: vec![1.0, 2.0, 3.0],
            gamma: vec![0.1; 3],
            loss: vec![0.9; 3],
        };
        let w = CostWeights { w0: 0.0, w1: 1.0, w2: 1.0 };
        assert!((cost_from_curves(&curves, &[0.5, 1.0, 0.5], 0.3, &w) - 0.4).abs() < 1e-12);
        let zero = CostWeights { w0: 0.0, w1: 0.0, w2: 0.0 };
        assert_eq!(cost_from_curves(&curves, &[0.5, 1.0, 0.5], 0.3, &zero), 0.0);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn target_validation() {
        assert!(MatchTarget::new(Complex64::new(-1.0, 0.0), Complex64::new(50.0, 0.0), 45.0, 10.0, 1).is_err());
        assert!(MatchTarget::new(Complex64::new(50.0, 0.0), Complex64::new(50.0, 0.0), 45.0, 0.0, 1).is_err());
        let t = target(1);
        assert!(t.check_grid(&FrequencyGrid::ghz100()).is_ok());
        let edge = MatchTarget { fc_ghz: 97.0, ..t };
        assert!(edge.check_grid(&FrequencyGrid::ghz100()).is_err());
        assert!(t.in_band(40.0) && t.in_band(50.0) && !t.in_band(50.5));
    }

    #[test]
    fn conjugate_match_zeroes_gamma() {
        let t = simulate(&g12(), &FrequencyGrid::ghz100()).unwrap();
        let k = 89;
        let sdd = mixed_mode_reduce(&t.expand_full(k).unwrap());
        let ports = conjugate_match(&sdd).unwrap();
        assert!(gamma_in(&sdd, &ports).unwrap().norm() < 1e-9);
        // At the conjugate match the gain equals the maximum available gain,
        // so any perturbed source or load does no better.
        let best = loss_mag(&sdd, &ports).unwrap();
        for dz in [Complex64::new(5.0, 0.0), Complex64::new(0.0, 5.0), Complex64::new(-3.0, -4.0)] {
            let p = ComplexPortSpec::new(ports.z01 + dz, ports.z02).unwrap();
            assert!(loss_mag(&sdd, &p).unwrap() <= best + 1e-12);
            let p = ComplexPortSpec::new(ports.z01, ports.z02 + dz).unwrap();
            assert!(loss_mag(&sdd, &p).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn matched_lossless_target_costs_nothing() {
        // Ideal 1:1 lossless transformer between equal real ports: Γ_in = 0.
        let grid = FrequencyGrid::new(1.0, 1.0, 5).unwrap();
        let mut s = Mat4::zeros();
        s[(0, 2)] = Complex64::from(1.0);
        s[(2, 0)] = Complex64::from(1.0);
        s[(1, 3)] = Complex64::from(1.0);
        s[(3, 1)] = Complex64::from(1.0);
        let t = SParamTensor::from_full(grid, &vec![s; 5]).unwrap();
        let ports = ComplexPortSpec::new(Complex64::from(Z_DIFF), Complex64::from(Z_DIFF)).unwrap();
        let curves = curves_from_tensor(&t, 0.0, 0.0, &ports).unwrap();
        let w = CostWeights { w0: 0.0, w1: 1.0, w2: 0.0 };
        assert!(cost_from_curves(&curves, &[1.0; 5], 0.0, &w) < 1e-12);
        assert!(curves.loss.iter().all(|l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn four_port_caps_agree_with_differential_caps() {
        let t = simulate(&g12(), &FrequencyGrid::ghz100()).unwrap();
        let with = network_with_caps(&t, 120.0, 35.0).unwrap();
        for k in [0, 50, 120, 199] {
            let a = mixed_mode_reduce(&with.expand_full(k).unwrap());
            let b = loaded_sdd(&t, k, 120.0, 35.0).unwrap();
            assert!((a - b).iter().all(|z| z.norm() < 1e-9), "k = {k}");
        }
    }

    #[test]
    fn oracle_backend_cost_is_nonnegative_and_deterministic() {
        let b = OracleBackend { grid: FrequencyGrid::ghz100() };
        let c = MatchCandidate { geometry: g12(), c1_ff: 20.0, c2_ff: 10.0 };
        let a = cost_js(&c, &target(1), &CostWeights::default(), &b).unwrap();
        assert!(a >= 0.0);
        assert_eq!(a, cost_js(&c, &target(1), &CostWeights::default(), &b).unwrap());
    }
}
