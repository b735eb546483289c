//! Lumped-element electromagnetic stand-in.
//!
//! Each winding is one series `R(f) + jωL` branch between its two port nodes,
//! the windings are coupled through `M = k sqrt(L1 L2)`, every port node
//! carries half of its winding's oxide capacitance to ground, and the
//! inter-winding capacitance is split evenly between port pairs 1-3 and 2-4.
//! The four-node admittance matrix is converted to 50 Ω S-parameters.

mod dataset;

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{GeometryError, XfmrGeometry, XfmrTemplate};
use crate::rfnet::{FrequencyGrid, Mat4, RfError, SParamTensor, Z0};

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetManifest, Split, MAGIC,
    SRF_REJECT_FRACTION,
};

/// Tag recorded in dataset manifests; bump whenever a constant below changes.
pub const ORACLE_VERSION: &str =
    "lumped2coil-v1 K1=2.34 K2=2.75 gamma=20um cox=0.03fF/um2 cww=0.03fF/um t=3um fskin=10GHz";

pub const MU0: f64 = 4e-7 * PI;
/// Current-sheet constants for square spirals.
pub const K1: f64 = 2.34;
pub const K2: f64 = 2.75;
/// Coupling decay length, micrometers.
pub const GAMMA_UM: f64 = 20.0;
pub const K_MIN: f64 = 1e-3;
pub const COPPER_SIGMA: f64 = 5.8e7;
pub const METAL_THICKNESS_UM: f64 = 3.0;
pub const F_SKIN_HZ: f64 = 10e9;
/// Oxide capacitance per trace area, F/µm².
pub const C_OX: f64 = 0.03e-15;
/// Inter-winding capacitance per overlap length, F/µm.
pub const C_WW: f64 = 0.03e-15;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error("invalid lumped model: {0}")]
    Model(String),
    #[error("ill-conditioned nodal system (I + Z0 Y) at frequency index {index}")]
    Conditioning { index: usize },
    #[error(
        "rejection rate {rate:.3} exceeds 0.5 ({rejected} rejected for {accepted} accepted): \
         parameter space mismatched to the frequency grid"
    )]
    RejectionRate { rate: f64, rejected: usize, accepted: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
}

pub fn coupling_base(template: XfmrTemplate) -> f64 {
    match template {
        XfmrTemplate::ParallelInductor => 0.95,
        XfmrTemplate::EightShaped => 0.72,
        XfmrTemplate::OneToOne | XfmrTemplate::MToN => 0.9,
    }
}

/// `K1 μ0 n² d_avg / (1 + K2 ρ)`, henries; `d_avg` in meters.
pub fn spiral_inductance(turns: u32, d_avg_m: f64, fill: f64) -> f64 {
    let n = turns as f64;
    K1 * MU0 * n * n * d_avg_m / (1.0 + K2 * fill)
}

/// Derived dimensions of one square spiral lobe, micrometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralDims {
    pub d_in: f64,
    pub d_avg: f64,
    pub fill: f64,
    pub length: f64,
}

pub fn spiral_dims(turns: u32, outer: f64, width: f64, spacing: f64) -> SpiralDims {
    let n = turns as f64;
    let d_in = outer - 2.0 * n * width - 2.0 * (n - 1.0) * spacing;
    let d_avg = 0.5 * (outer + d_in);
    SpiralDims {
        d_in,
        d_avg,
        fill: (outer - d_in) / (outer + d_in),
        length: 4.0 * n * d_avg,
    }
}

/// Two-coil lumped transformer. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedModel {
    pub l1: f64,
    pub l2: f64,
    pub k: f64,
    pub rdc1: f64,
    pub rdc2: f64,
    pub f_skin: f64,
    /// Shunt capacitance at each primary port node.
    pub cox1: f64,
    /// Shunt capacitance at each secondary port node.
    pub cox2: f64,
    /// Total inter-winding capacitance.
    pub cww: f64,
}

impl LumpedModel {
    pub fn validate(&self) -> Result<(), OracleError> {
        let pos = [("l1", self.l1), ("l2", self.l2), ("rdc1", self.rdc1), ("rdc2", self.rdc2), ("f_skin", self.f_skin)];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(OracleError::Model(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(OracleError::Model(format!("k must lie in (0, 1), got {}", self.k)));
        }
        for (name, v) in [("cox1", self.cox1), ("cox2", self.cox2), ("cww", self.cww)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(OracleError::Model(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn mutual(&self) -> f64 {
        self.k * (self.l1 * self.l2).sqrt()
    }

    /// Nodal admittance matrix at `freq_hz`.
    pub fn admittance(&self, freq_hz: f64) -> Mat4 {
        let w = 2.0 * PI * freq_hz;
        let skin = 1.0 + (freq_hz / self.f_skin).sqrt();
        let jw = Complex64::new(0.0, w);
        let zb = Matrix2::new(
            self.rdc1 * skin + jw * self.l1,
            jw * self.mutual(),
            jw * self.mutual(),
            self.rdc2 * skin + jw * self.l2,
        );
        let det = zb[(0, 0)] * zb[(1, 1)] - zb[(0, 1)] * zb[(1, 0)];
        let yb = Matrix2::new(zb[(1, 1)], -zb[(0, 1)], -zb[(1, 0)], zb[(0, 0)]) / det;
        // Branch b runs from node 2b to node 2b+1.
        let ends = |b: usize| [(2 * b, 1.0), (2 * b + 1, -1.0)];
        let mut y = Mat4::zeros();
        for bi in 0..2 {
            for bj in 0..2 {
                for (ni, si) in ends(bi) {
                    for (nj, sj) in ends(bj) {
                        y[(ni, nj)] += yb[(bi, bj)] * (si * sj);
                    }
                }
            }
        }
        let cap = |c: f64| jw * c;
        for (node, c) in [(0, self.cox1), (1, self.cox1), (2, self.cox2), (3, self.cox2)] {
            y[(node, node)] += cap(c);
        }
        for (a, b) in [(0, 2), (1, 3)] {
            let yc = cap(0.5 * self.cww);
            y[(a, a)] += yc;
            y[(b, b)] += yc;
            y[(a, b)] -= yc;
            y[(b, a)] -= yc;
        }
        y
    }

    /// Full 4x4 S-matrix at `freq_hz`, or `None` if `I + Z0 Y` is singular.
    pub fn full_s(&self, freq_hz: f64) -> Option<Mat4> {
        let zy = self.admittance(freq_hz) * Complex64::from(Z0);
        let id = Mat4::identity();
        let inv = (id + zy).try_inverse()?;
        let s = (id - zy) * inv;
        s.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(s)
    }
}

pub fn synthesize_lumped(g: &XfmrGeometry) -> Result<LumpedModel, OracleError> {
    g.validate()?;
    let lobes = g.template.lobes() as f64;
    let winding = |turns: u32| {
        let d = spiral_dims(turns, g.outer_dim, g.trace_width, g.trace_spacing);
        let l = lobes * spiral_inductance(turns, d.d_avg * 1e-6, d.fill);
        let length = lobes * d.length;
        let rdc = length * 1e-6 / (COPPER_SIGMA * g.trace_width * 1e-6 * METAL_THICKNESS_UM * 1e-6);
        let cox = 0.5 * C_OX * length * g.trace_width;
        (l, length, rdc, cox)
    };
    let (l1, len1, rdc1, cox1) = winding(g.turns_primary);
    let (l2, len2, rdc2, cox2) = winding(g.turns_secondary);
    let k = (coupling_base(g.template) * (-g.winding_gap / GAMMA_UM).exp()).max(K_MIN);
    Ok(LumpedModel {
        l1,
        l2,
        k,
        rdc1,
        rdc2,
        f_skin: F_SKIN_HZ,
        cox1,
        cox2,
        cww: C_WW * len1.min(len2),
    })
}

pub fn solve_sparams(m: &LumpedModel, grid: &FrequencyGrid) -> Result<SParamTensor, OracleError> {
    m.validate()?;
    let full = (0..grid.k)
        .map(|k| m.full_s(grid.freq_hz(k)).ok_or(OracleError::Conditioning { index: k }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SParamTensor::from_full(*grid, &full)?)
}

/// Geometry straight to S-parameters.
pub fn simulate(g: &XfmrGeometry, grid: &FrequencyGrid) -> Result<SParamTensor, OracleError> {
    solve_sparams(&synthesize_lumped(g)?, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfnet::{detect_srf, Channel};

    fn geom(m: u32, n: u32) -> XfmrGeometry {
        XfmrGeometry {
            template: XfmrTemplate::MToN,
            turns_primary: m,
            turns_secondary: n,
            outer_dim: 120.0,
            trace_width: 6.0,
            trace_spacing: 3.0,
            winding_gap: 2.0,
        }
    }

    fn ideal_lc(c_diff: f64) -> LumpedModel {
        LumpedModel {
            l1: 100e-12,
            l2: 100e-12,
            k: K_MIN,
            rdc1: 1e-3,
            rdc2: 1e-3,
            f_skin: F_SKIN_HZ,
            // Two node capacitors in series across the winding.
            cox1: 2.0 * c_diff,
            cox2: 2.0 * c_diff,
            cww: 0.0,
        }
    }

    #[test]
    fn inductance_formula_value() {
        let l = spiral_inductance(2, 100e-6, 0.3);
        let expected = 2.34 * MU0 * 4.0 * 100e-6 / 1.825;
        assert!((l - expected).abs() < 1e-24);
        assert!((l - 0.644e-9).abs() < 0.001e-9);
    }

    #[test]
    fn coupling_clamps_at_large_gap() {
        let mut g = geom(1, 1);
        g.winding_gap = 1e6;
        assert_eq!(synthesize_lumped(&g).unwrap().k, K_MIN);
    }

    #[test]
    fn symmetric_windings_match() {
        let m = synthesize_lumped(&geom(3, 3)).unwrap();
        assert_eq!(m.l1, m.l2);
        assert_eq!(m.rdc1, m.rdc2);
        let m = synthesize_lumped(&geom(1, 3)).unwrap();
        assert!(m.l2 > m.l1);
    }

    #[test]
    fn template_couplings() {
        for (t, k0) in [
            (XfmrTemplate::MToN, 0.9),
            (XfmrTemplate::ParallelInductor, 0.95),
            (XfmrTemplate::EightShaped, 0.72),
        ] {
            let g = XfmrGeometry { template: t, ..geom(1, 1) };
            let m = synthesize_lumped(&g).unwrap();
            assert!((m.k - k0 * (-0.1f64).exp()).abs() < 1e-15);
        }
        let single = synthesize_lumped(&geom(1, 1)).unwrap();
        let eight = synthesize_lumped(&XfmrGeometry { template: XfmrTemplate::EightShaped, ..geom(1, 1) }).unwrap();
        assert!((eight.l1 / single.l1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dc_limit_is_a_through_connection() {
        let mut m = synthesize_lumped(&geom(2, 2)).unwrap();
        m.k = K_MIN;
        let s = m.full_s(1e3).unwrap();
        let r = m.rdc1 * (1.0 + (1e3 / m.f_skin).sqrt());
        assert!(s[(0, 2)].norm() < 1e-6);
        assert!((s[(0, 1)].re - 2.0 * Z0 / (r + 2.0 * Z0)).abs() < 1e-6);
        assert!((s[(0, 0)].re - r / (r + 2.0 * Z0)).abs() < 1e-6);
    }

    #[test]
    fn computed_matrix_is_reciprocal_and_mirror_symmetric() {
        let m = synthesize_lumped(&geom(2, 3)).unwrap();
        let s = m.full_s(37e9).unwrap();
        let t = SParamTensor::from_full(FrequencyGrid::new(37.0, 1.0, 2).unwrap(), &[s, s]).unwrap();
        let e = t.expand_full(0).unwrap();
        assert!((e - s).iter().all(|z| z.norm() < 1e-12));
        assert_eq!(t.get(Channel::S12, 0), e[(1, 0)]);
    }

    #[test]
    fn parallel_lc_resonance() {
        let grid = FrequencyGrid::ghz200();
        let c: f64 = 25.33e-15;
        let f0 = 1.0 / (2.0 * PI * (100e-12 * c).sqrt()) / 1e9;
        assert!((f0 - 100.0).abs() < 0.01);
        let srf = detect_srf(&solve_sparams(&ideal_lc(c), &grid).unwrap());
        assert!(srf.found && (srf.ghz - f0).abs() <= grid.f_step, "{srf:?}");
        let srf_half = detect_srf(&solve_sparams(&ideal_lc(c / 2.0), &grid).unwrap());
        assert!((srf_half.ghz - f0 * 2f64.sqrt()).abs() <= grid.f_step, "{srf_half:?}");
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = ideal_lc(1e-15);
        m.k = 1.0;
        assert!(m.validate().is_err());
        m.k = 0.5;
        m.cww = -1.0;
        assert!(m.validate().is_err());
    }
}
