use std::fmt;

use num_complex::Complex64;

use super::{Mat4, RfError};

/// Uniform frequency grid, GHz. Point `k` sits at `f_start + k * f_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub f_start: f64,
    pub f_step: f64,
    pub k: usize,
}

impl FrequencyGrid {
    pub fn new(f_start: f64, f_step: f64, k: usize) -> Result<Self, RfError> {
        if !(f_start.is_finite() && f_start > 0.0) {
            return Err(RfError::Grid(format!("f_start must be > 0, got {f_start}")));
        }
        if !(f_step.is_finite() && f_step > 0.0) {
            return Err(RfError::Grid(format!("f_step must be > 0, got {f_step}")));
        }
        if k < 2 {
            return Err(RfError::Grid(format!("need at least 2 points, got {k}")));
        }
        Ok(FrequencyGrid { f_start, f_step, k })
    }

    /// 0.5 GHz to 100 GHz in 0.5 GHz steps.
    pub fn ghz100() -> Self {
        FrequencyGrid { f_start: 0.5, f_step: 0.5, k: 200 }
    }

    /// 1 GHz to 200 GHz in 1 GHz steps.
    pub fn ghz200() -> Self {
        FrequencyGrid { f_start: 1.0, f_step: 1.0, k: 200 }
    }

    pub fn freq_ghz(&self, k: usize) -> f64 {
        self.f_start + k as f64 * self.f_step
    }

    pub fn freq_hz(&self, k: usize) -> f64 {
        self.freq_ghz(k) * 1e9
    }

    pub fn omega(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.freq_hz(k)
    }

    pub fn f_max(&self) -> f64 {
        self.freq_ghz(self.k - 1)
    }

    pub fn freqs_ghz(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.k).map(|k| self.freq_ghz(k))
    }

    /// Same span sampled twice as densely (`2K` points).
    pub fn refined(&self) -> Self {
        FrequencyGrid {
            f_start: self.f_start - self.f_step / 2.0,
            f_step: self.f_step / 2.0,
            k: 2 * self.k,
        }
    }
}

impl fmt::Display for FrequencyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.f_start, self.f_step, self.k)
    }
}

/// The six stored S-parameter channels, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    S11,
    S12,
    S13,
    S14,
    S33,
    S34,
}

pub const CHANNELS: [Channel; 6] = [
    Channel::S11,
    Channel::S12,
    Channel::S13,
    Channel::S14,
    Channel::S33,
    Channel::S34,
];

/// Real channels per frequency point (6 complex channels split re/im).
pub const REAL_CHANNELS: usize = 12;

impl Channel {
    /// Zero-based (row, col) in the full 4x4 matrix.
    pub fn position(self) -> (usize, usize) {
        match self {
            Channel::S11 => (0, 0),
            Channel::S12 => (0, 1),
            Channel::S13 => (0, 2),
            Channel::S14 => (0, 3),
            Channel::S33 => (2, 2),
            Channel::S34 => (2, 3),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Channel feeding entry (row, col) of the expanded matrix under reciprocity
/// and the simultaneous 1<->2 / 3<->4 mirror symmetry.
fn source_channel(row: usize, col: usize) -> Channel {
    let (r, c) = if row <= col { (row, col) } else { (col, row) };
    match (r, c) {
        (0, 0) | (1, 1) => Channel::S11,
        (0, 1) => Channel::S12,
        (0, 2) | (1, 3) => Channel::S13,
        (0, 3) | (1, 2) => Channel::S14,
        (2, 2) | (3, 3) => Channel::S33,
        (2, 3) => Channel::S34,
        _ => unreachable!(),
    }
}

/// Six complex channels on a frequency grid, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SParamTensor {
    grid: FrequencyGrid,
    data: Vec<Complex64>,
}

impl SParamTensor {
    /// `data[c * K + k]` holds channel `c` at frequency `k`.
    pub fn new(grid: FrequencyGrid, data: Vec<Complex64>) -> Result<Self, RfError> {
        if data.len() != 6 * grid.k {
            return Err(RfError::DataLength { got: data.len(), k: grid.k });
        }
        for (i, v) in data.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(RfError::NonFinite {
                    channel: CHANNELS[i / grid.k],
                    index: i % grid.k,
                });
            }
        }
        Ok(SParamTensor { grid, data })
    }

    /// Compresses full matrices (one per grid point) to the six channels.
    pub fn from_full(grid: FrequencyGrid, full: &[Mat4]) -> Result<Self, RfError> {
        if full.len() != grid.k {
            return Err(RfError::DataLength { got: full.len() * 6, k: grid.k });
        }
        let mut data = vec![Complex64::new(0.0, 0.0); 6 * grid.k];
        for (c, ch) in CHANNELS.iter().enumerate() {
            let (r, col) = ch.position();
            for (k, m) in full.iter().enumerate() {
                data[c * grid.k + k] = m[(r, col)];
            }
        }
        SParamTensor::new(grid, data)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn get(&self, ch: Channel, k: usize) -> Complex64 {
        self.data[ch.index() * self.grid.k + k]
    }

    pub fn channel(&self, ch: Channel) -> &[Complex64] {
        let k = self.grid.k;
        &self.data[ch.index() * k..(ch.index() + 1) * k]
    }

    /// Full symmetric 4x4 matrix at grid index `k`.
    pub fn expand_full(&self, k: usize) -> Result<Mat4, RfError> {
        if k >= self.grid.k {
            return Err(RfError::IndexOutOfRange { index: k, k: self.grid.k });
        }
        Ok(Mat4::from_fn(|r, c| self.get(source_channel(r, c), k)))
    }

    /// Channel-major reals: for each channel, `K` real parts then `K`
    /// imaginary parts. Length `12 K`.
    pub fn pack(&self) -> Vec<f64> {
        let k = self.grid.k;
        let mut out = Vec::with_capacity(REAL_CHANNELS * k);
        for c in 0..6 {
            let ch = &self.data[c * k..(c + 1) * k];
            out.extend(ch.iter().map(|z| z.re));
            out.extend(ch.iter().map(|z| z.im));
        }
        out
    }

    pub fn unpack(v: &[f64], grid: FrequencyGrid) -> Result<Self, RfError> {
        let k = grid.k;
        if v.len() != REAL_CHANNELS * k {
            return Err(RfError::PackLength { got: v.len(), expected: REAL_CHANNELS * k });
        }
        let mut data = Vec::with_capacity(6 * k);
        for c in 0..6 {
            let re = &v[2 * c * k..(2 * c + 1) * k];
            let im = &v[(2 * c + 1) * k..(2 * c + 2) * k];
            data.extend(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)));
        }
        SParamTensor::new(grid, data)
    }

    /// [`unpack`](Self::unpack) from single-precision storage.
    pub fn unpack_f32(v: &[f32], grid: FrequencyGrid) -> Result<Self, RfError> {
        let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        SParamTensor::unpack(&wide, grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn constant_tensor() -> SParamTensor {
        let grid = FrequencyGrid::new(1.0, 1.0, 2).unwrap();
        let data = (0..6)
            .flat_map(|i| {
                let v = (i + 1) as f64 / 10.0;
                [c(v, -v), c(v, -v)]
            })
            .collect();
        SParamTensor::new(grid, data).unwrap()
    }

    #[test]
    fn grid_validation_and_profiles() {
        assert!(FrequencyGrid::new(0.0, 0.5, 200).is_err());
        assert!(FrequencyGrid::new(0.5, -0.5, 200).is_err());
        assert!(FrequencyGrid::new(0.5, 0.5, 1).is_err());
        assert_eq!(FrequencyGrid::ghz100().f_max(), 100.0);
        assert_eq!(FrequencyGrid::ghz200().f_max(), 200.0);
    }

    #[test]
    fn expand_matches_symmetry_table() {
        let t = constant_tensor();
        let m = t.expand_full(1).unwrap();
        let v = |i: usize| c(i as f64 / 10.0, -(i as f64) / 10.0);
        #[rustfmt::skip]
        let expected = [
            [v(1), v(2), v(3), v(4)],
            [v(2), v(1), v(4), v(3)],
            [v(3), v(4), v(5), v(6)],
            [v(4), v(3), v(6), v(5)],
        ];
        for r in 0..4 {
            for col in 0..4 {
                assert_eq!(m[(r, col)], expected[r][col], "entry ({r},{col})");
            }
        }
        assert_eq!(m, m.transpose());
        let back = SParamTensor::from_full(*t.grid(), &[m, m]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn expand_rejects_out_of_range() {
        assert!(matches!(
            constant_tensor().expand_full(2),
            Err(RfError::IndexOutOfRange { index: 2, k: 2 })
        ));
    }

    #[test]
    fn pack_layout_on_toy_grid() {
        let grid = FrequencyGrid::new(1.0, 1.0, 2).unwrap();
        let data = (0..12).map(|i| c(i as f64, 100.0 + i as f64)).collect();
        let t = SParamTensor::new(grid, data).unwrap();
        let p = t.pack();
        assert_eq!(p.len(), 24);
        // S11 re[0..2], S11 im[0..2], S12 re[0..2], ...
        assert_eq!(&p[0..4], &[0.0, 1.0, 100.0, 101.0]);
        assert_eq!(&p[4..8], &[2.0, 3.0, 102.0, 103.0]);
        assert_eq!(&p[20..24], &[10.0, 11.0, 110.0, 111.0]);
        assert_eq!(SParamTensor::unpack(&p, grid).unwrap(), t);
    }

    #[test]
    fn pack_length_for_full_grid() {
        let grid = FrequencyGrid::ghz100();
        let t = SParamTensor::new(grid, vec![c(0.1, 0.2); 1200]).unwrap();
        assert_eq!(t.pack().len(), 2400);
        assert!(matches!(
            SParamTensor::unpack(&[0.0; 10], grid),
            Err(RfError::PackLength { got: 10, expected: 2400 })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let grid = FrequencyGrid::new(1.0, 1.0, 2).unwrap();
        let mut data = vec![c(0.0, 0.0); 12];
        data[5] = c(f64::NAN, 0.0);
        assert!(matches!(
            SParamTensor::new(grid, data),
            Err(RfError::NonFinite { channel: Channel::S13, index: 1 })
        ));
    }
}
