use nalgebra::{Const, DimMin, SMatrix};
use num_complex::Complex64;

use super::{Mat2, Mat4, RfError, Z_DIFF};

type CMat<const N: usize> = SMatrix<Complex64, N, N>;

fn invert<const N: usize>(m: CMat<N>, what: &'static str) -> Result<CMat<N>, RfError>
where
    Const<N>: DimMin<Const<N>, Output = Const<N>>,
{
    let inv = m.try_inverse().ok_or(RfError::Singular { what, index: None })?;
    if inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(inv)
    } else {
        Err(RfError::Singular { what, index: None })
    }
}

/// `Z = Z0 (I + S)(I - S)^-1`.
pub fn s_to_z<const N: usize>(s: &CMat<N>, z0: f64) -> Result<CMat<N>, RfError>
where
    Const<N>: DimMin<Const<N>, Output = Const<N>>,
{
    let id = CMat::<N>::identity();
    let inv = invert(id - s, "s_to_z (I - S)")?;
    Ok((id + s) * inv * Complex64::from(z0))
}

/// `S = (Z - Z0 I)(Z + Z0 I)^-1`.
pub fn z_to_s<const N: usize>(z: &CMat<N>, z0: f64) -> Result<CMat<N>, RfError>
where
    Const<N>: DimMin<Const<N>, Output = Const<N>>,
{
    let zi = CMat::<N>::identity() * Complex64::from(z0);
    let inv = invert(z + zi, "z_to_s (Z + Z0 I)")?;
    Ok((z - zi) * inv)
}

/// `Y = (1/Z0)(I - S)(I + S)^-1`.
pub fn s_to_y<const N: usize>(s: &CMat<N>, z0: f64) -> Result<CMat<N>, RfError>
where
    Const<N>: DimMin<Const<N>, Output = Const<N>>,
{
    let id = CMat::<N>::identity();
    let inv = invert(id + s, "s_to_y (I + S)")?;
    Ok((id - s) * inv * Complex64::from(1.0 / z0))
}

/// `S = (I - Z0 Y)(I + Z0 Y)^-1`.
pub fn y_to_s<const N: usize>(y: &CMat<N>, z0: f64) -> Result<CMat<N>, RfError>
where
    Const<N>: DimMin<Const<N>, Output = Const<N>>,
{
    let id = CMat::<N>::identity();
    let zy = y * Complex64::from(z0);
    let inv = invert(id + zy, "y_to_s (I + Z0 Y)")?;
    Ok((id - zy) * inv)
}

/// Differential-differential block of the mixed-mode transform, referenced
/// to 2·Z0. Port pairs (1,2) and (3,4) form differential ports 1 and 2.
pub fn mixed_mode_reduce(s: &Mat4) -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let md = nalgebra::Matrix2x4::<Complex64>::new(
        h.into(), (-h).into(), 0.0.into(), 0.0.into(),
        0.0.into(), 0.0.into(), h.into(), (-h).into(),
    );
    md * s * md.transpose()
}

/// Differential source/load impedances for a matching problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexPortSpec {
    pub z01: Complex64,
    pub z02: Complex64,
}

impl ComplexPortSpec {
    pub fn new(z01: Complex64, z02: Complex64) -> Result<Self, RfError> {
        for z in [z01, z02] {
            if !(z.re > 0.0 && z.re.is_finite() && z.im.is_finite()) {
                return Err(RfError::BadReference(z));
            }
        }
        Ok(ComplexPortSpec { z01, z02 })
    }
}

fn reflection(z: Complex64, zr: f64) -> Complex64 {
    (z - zr) / (z + zr)
}

/// Reflection at port 1 (reference `Z_DIFF`) with port 2 terminated by a
/// load of reflection `gamma_l`.
fn loaded_reflection(sdd: &Mat2, gamma_l: Complex64) -> Complex64 {
    sdd[(0, 0)] + sdd[(0, 1)] * sdd[(1, 0)] * gamma_l / (Complex64::from(1.0) - sdd[(1, 1)] * gamma_l)
}

/// Input impedance at differential port 1 with `z_load` on port 2.
/// Returns `None` when the input looks like an open circuit.
pub fn input_impedance(sdd: &Mat2, z_load: Complex64) -> Option<Complex64> {
    let g = loaded_reflection(sdd, reflection(z_load, Z_DIFF));
    let den = Complex64::from(1.0) - g;
    if den.norm() < 1e-15 {
        None
    } else {
        Some(Z_DIFF * (Complex64::from(1.0) + g) / den)
    }
}

/// Power-wave input reflection coefficient seen from a source of impedance
/// Z01 when the network is loaded by Z02.
pub fn gamma_in(sdd: &Mat2, ports: &ComplexPortSpec) -> Result<Complex64, RfError> {
    let g = loaded_reflection(sdd, reflection(ports.z02, Z_DIFF));
    let one = Complex64::from(1.0);
    // Z_in = Z_DIFF (1 + g)/(1 - g), kept in numerator/denominator form so an
    // open-circuit input stays finite.
    let num = (one + g) * Z_DIFF - (one - g) * ports.z01.conj();
    let den = (one + g) * Z_DIFF + (one - g) * ports.z01;
    let scale = (one - g).norm();
    if den.norm() < 1e-3 * ports.z01.norm() * scale || den.norm() == 0.0 {
        return Err(RfError::SingularTermination(if scale > 0.0 {
            den.norm() / scale
        } else {
            0.0
        }));
    }
    Ok(num / den)
}

/// Square root of the transducer power gain from the Z01 source to the Z02
/// load; 1 means all available power reaches the load.
pub fn loss_mag(sdd: &Mat2, ports: &ComplexPortSpec) -> Result<f64, RfError> {
    gamma_in(sdd, ports)?;
    let gs = reflection(ports.z01, Z_DIFF);
    let gl = reflection(ports.z02, Z_DIFF);
    let one = Complex64::from(1.0);
    let den = (one - sdd[(0, 0)] * gs) * (one - sdd[(1, 1)] * gl) - sdd[(0, 1)] * sdd[(1, 0)] * gs * gl;
    if den.norm() == 0.0 {
        return Err(RfError::SingularTermination(0.0));
    }
    let gt = sdd[(1, 0)].norm_sqr() * (1.0 - gs.norm_sqr()) * (1.0 - gl.norm_sqr()) / den.norm_sqr();
    Ok(gt.max(0.0).sqrt().min(1.0))
}

/// Adds shunt capacitors across differential port 1 (`c1`) and port 2
/// (`c2`), farads, at angular frequency `omega`.
pub fn add_shunt_caps(sdd: &Mat2, omega: f64, c1: f64, c2: f64) -> Result<Mat2, RfError> {
    if c1 == 0.0 && c2 == 0.0 {
        return Ok(*sdd);
    }
    let mut y = s_to_y(sdd, Z_DIFF)?;
    y[(0, 0)] += Complex64::new(0.0, omega * c1);
    y[(1, 1)] += Complex64::new(0.0, omega * c2);
    y_to_s(&y, Z_DIFF)
}
