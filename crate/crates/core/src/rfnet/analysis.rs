use num_complex::Complex64;

use super::{mixed_mode_reduce, RfError, SParamTensor, Z_DIFF};

/// Reported quality factor when the extracted resistance is numerically zero.
pub const Q_CAP: f64 = 1e4;

/// Differential input impedance of the primary with the secondary
/// differential port open (common modes stay terminated). `None` when the
/// primary itself looks open.
pub fn diff_input_impedance_open(t: &SParamTensor, k: usize) -> Result<Option<Complex64>, RfError> {
    let sdd = mixed_mode_reduce(&t.expand_full(k)?);
    let one = Complex64::from(1.0);
    let through = sdd[(0, 1)] * sdd[(1, 0)];
    let g = if through.norm() < 1e-300 || (one - sdd[(1, 1)]).norm() < 1e-14 {
        sdd[(0, 0)]
    } else {
        sdd[(0, 0)] + through / (one - sdd[(1, 1)])
    };
    let den = one - g;
    Ok(if den.norm() < 1e-15 {
        None
    } else {
        Some(Z_DIFF * (one + g) / den)
    })
}

/// Self-resonant frequency estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Srf {
    pub ghz: f64,
    /// `false` when no inductive-to-capacitive crossing exists on the grid;
    /// `ghz` then holds `f_max / 2`.
    pub found: bool,
}

/// Lowest frequency where Im(Z_d) of the primary turns from positive to
/// non-positive, linearly interpolated between the bracketing grid points.
pub fn detect_srf(t: &SParamTensor) -> Srf {
    let grid = t.grid();
    let reactance = |k: usize| -> Option<f64> {
        match diff_input_impedance_open(t, k) {
            Ok(Some(z)) => Some(z.im),
            _ => None,
        }
    };
    let mut prev = reactance(0);
    for k in 1..grid.k {
        let cur = reactance(k);
        if let (Some(a), Some(b)) = (prev, cur) {
            if a > 0.0 && b <= 0.0 {
                let frac = a / (a - b);
                return Srf {
                    ghz: grid.freq_ghz(k - 1) + frac * grid.f_step,
                    found: true,
                };
            }
        }
        prev = cur;
    }
    Srf { ghz: grid.f_max() / 2.0, found: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqPoint {
    /// Henries.
    pub inductance: f64,
    pub q: f64,
    /// Set when the resistance vanished and `q` was clamped to [`Q_CAP`].
    pub q_capped: bool,
}

/// `L = Im(Z_d)/ω`, `Q = Im(Z_d)/Re(Z_d)` at grid index `k`.
pub fn extract_lq(t: &SParamTensor, k: usize) -> Result<LqPoint, RfError> {
    let z = diff_input_impedance_open(t, k)?.ok_or(RfError::NonPhysical {
        index: k,
        re: f64::INFINITY,
    })?;
    let omega = t.grid().omega(k);
    let inductance = z.im / omega;
    let tol = 1e-9 * z.norm();
    if z.re < -tol {
        return Err(RfError::NonPhysical { index: k, re: z.re });
    }
    let (q, q_capped) = if z.re <= tol {
        (Q_CAP.copysign(z.im), true)
    } else {
        let q = z.im / z.re;
        if q.abs() > Q_CAP {
            (Q_CAP.copysign(q), true)
        } else {
            (q, false)
        }
    };
    Ok(LqPoint { inductance, q, q_capped })
}
