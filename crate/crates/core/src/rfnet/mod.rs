//! S-parameter algebra for the four-port transformer network.
//!
//! Port convention: ports 1 and 2 are the two ends of the primary winding
//! (differential input), ports 3 and 4 the ends of the secondary winding
//! (differential output). Single-ended reference impedance is 50 Ω, so the
//! differential reference is 100 Ω.

mod analysis;
mod network;
mod tensor;
pub mod touchstone;

use thiserror::Error;

pub use analysis::{detect_srf, diff_input_impedance_open, extract_lq, LqPoint, Srf, Q_CAP};
pub use network::{
    add_shunt_caps, gamma_in, input_impedance, loss_mag, mixed_mode_reduce, s_to_y, s_to_z, y_to_s,
    z_to_s, ComplexPortSpec,
};
pub use tensor::{Channel, FrequencyGrid, SParamTensor, CHANNELS, REAL_CHANNELS};
pub use touchstone::{parse_touchstone, touchstone_read, touchstone_string, touchstone_write, TouchstoneData, TouchstoneError};

pub use num_complex::Complex64;

/// Single-ended port reference impedance in ohms.
pub const Z0: f64 = 50.0;

/// Differential-mode reference impedance (2·Z0).
pub const Z_DIFF: f64 = 2.0 * Z0;

pub type Mat4 = nalgebra::Matrix4<Complex64>;
pub type Mat2 = nalgebra::Matrix2<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfError {
    #[error("invalid frequency grid: {0}")]
    Grid(String),
    #[error("tensor data length {got} does not match 6 channels x {k} points")]
    DataLength { got: usize, k: usize },
    #[error("packed vector length {got}, expected {expected}")]
    PackLength { got: usize, expected: usize },
    #[error("non-finite S-parameter value in channel {channel} at index {index}")]
    NonFinite { channel: Channel, index: usize },
    #[error("frequency index {index} out of range for {k} points")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("singular matrix in {what}{}", freq_suffix(*.index))]
    Singular { what: &'static str, index: Option<usize> },
    #[error("reference impedance must have positive real part, got {0}")]
    BadReference(Complex64),
    #[error("singular termination: |Z_in + Z01| = {0:e} below 1e-3 |Z01|")]
    SingularTermination(f64),
    #[error("non-physical impedance at index {index}: Re(Z_d) = {re}")]
    NonPhysical { index: usize, re: f64 },
}

fn freq_suffix(index: Option<usize>) -> String {
    match index {
        Some(i) => format!(" at frequency index {i}"),
        None => String::new(),
    }
}

impl RfError {
    /// Attaches a frequency index to a conversion error.
    pub fn at(self, k: usize) -> Self {
        match self {
            RfError::Singular { what, .. } => RfError::Singular { what, index: Some(k) },
            other => other,
        }
    }
}
