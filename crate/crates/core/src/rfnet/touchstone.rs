//! Touchstone v1 `.s4p` reader and writer.
//!
//! Files are written with the option line `# GHz S RI R 50` and the full
//! 4x4 matrix per frequency, one matrix row per text line. The reader accepts
//! any whitespace layout, `!` comments, Hz/kHz/MHz/GHz and RI/MA/DB formats,
//! and compresses back to the six canonical channels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use super::{FrequencyGrid, Mat4, RfError, SParamTensor, Z0};

const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TouchstoneError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed option line: {msg}")]
    OptionLine { line: usize, msg: String },
    #[error("line {line}: not a number: '{token}'")]
    Number { line: usize, token: String },
    #[error("line {line}: frequency {freq} GHz does not increase")]
    NonMonotone { line: usize, freq: f64 },
    #[error("line {line}: truncated data row ({got} of 33 values for the last frequency)")]
    Truncated { line: usize, got: usize },
    #[error("line {line}: frequencies are not on a uniform grid")]
    NonUniform { line: usize },
    #[error("no data rows")]
    Empty,
    #[error(transparent)]
    Network(#[from] RfError),
}

/// A parsed file plus symmetry warnings.
#[derive(Debug, Clone)]
pub struct TouchstoneData {
    pub tensor: SParamTensor,
    pub warnings: Vec<String>,
}

pub fn touchstone_write(t: &SParamTensor, path: impl AsRef<Path>) -> Result<(), TouchstoneError> {
    fs::write(path, touchstone_string(t)?)?;
    Ok(())
}

pub fn touchstone_string(t: &SParamTensor) -> Result<String, RfError> {
    let grid = t.grid();
    let mut out = String::new();
    out.push_str("! 4-port S-parameters, ports (1,2) primary, (3,4) secondary\n");
    out.push_str("# GHz S RI R 50\n");
    for k in 0..grid.k {
        let m = t.expand_full(k)?;
        for r in 0..4 {
            if r == 0 {
                let _ = write!(out, "{:.12e}", grid.freq_ghz(k));
            } else {
                out.push_str("                  ");
            }
            for c in 0..4 {
                let z = m[(r, c)];
                let _ = write!(out, " {:.12e} {:.12e}", z.re, z.im);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn touchstone_read(path: impl AsRef<Path>) -> Result<TouchstoneData, TouchstoneError> {
    parse_touchstone(&fs::read_to_string(path)?)
}

#[derive(Clone, Copy)]
enum Format {
    Ri,
    Ma,
    Db,
}

struct Options {
    to_ghz: f64,
    format: Format,
}

fn parse_options(line: &str, lineno: usize) -> Result<Options, TouchstoneError> {
    let err = |msg: String| TouchstoneError::OptionLine { line: lineno, msg };
    let mut to_ghz = 1.0;
    let mut format = Format::Ma;
    let mut param_seen = false;
    let mut toks = line[1..].split_whitespace();
    while let Some(tok) = toks.next() {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => to_ghz = 1e-9,
            "KHZ" => to_ghz = 1e-6,
            "MHZ" => to_ghz = 1e-3,
            "GHZ" => to_ghz = 1.0,
            "S" => param_seen = true,
            "Y" | "Z" | "H" | "G" => return Err(err(format!("unsupported parameter type {tok}"))),
            "RI" => format = Format::Ri,
            "MA" => format = Format::Ma,
            "DB" => format = Format::Db,
            "R" => {
                let r = toks
                    .next()
                    .ok_or_else(|| err("missing reference resistance after R".into()))?;
                let r: f64 = r.parse().map_err(|_| err(format!("bad reference '{r}'")))?;
                if (r - Z0).abs() > 1e-12 {
                    return Err(err(format!("only a {Z0} ohm reference is supported, got {r}")));
                }
            }
            other => return Err(err(format!("unknown token '{other}'"))),
        }
    }
    if !param_seen {
        return Err(err("parameter type S missing".into()));
    }
    Ok(Options { to_ghz, format })
}

fn to_complex(a: f64, b: f64, fmt: Format) -> Complex64 {
    match fmt {
        Format::Ri => Complex64::new(a, b),
        Format::Ma => Complex64::from_polar(a, b.to_radians()),
        Format::Db => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

pub fn parse_touchstone(text: &str) -> Result<TouchstoneData, TouchstoneError> {
    let mut options: Option<Options> = None;
    let mut values: Vec<(f64, usize)> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if options.is_some() {
                return Err(TouchstoneError::OptionLine {
                    line: lineno,
                    msg: "duplicate option line".into(),
                });
            }
            options = Some(parse_options(line, lineno)?);
            continue;
        }
        if options.is_none() {
            return Err(TouchstoneError::OptionLine {
                line: lineno,
                msg: "data before option line".into(),
            });
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| TouchstoneError::Number {
                line: lineno,
                token: tok.to_string(),
            })?;
            values.push((v, lineno));
        }
        last_line = lineno;
    }
    let opts = options.ok_or(TouchstoneError::OptionLine {
        line: 0,
        msg: "missing option line".into(),
    })?;
    if values.is_empty() {
        return Err(TouchstoneError::Empty);
    }
    const PER_FREQ: usize = 33;
    if values.len() % PER_FREQ != 0 {
        return Err(TouchstoneError::Truncated {
            line: last_line,
            got: values.len() % PER_FREQ,
        });
    }
    let mut freqs = Vec::new();
    let mut mats = Vec::new();
    let mut warnings = Vec::new();
    for block in values.chunks(PER_FREQ) {
        let (f, lineno) = block[0];
        let f = f * opts.to_ghz;
        if let Some(&prev) = freqs.last() {
            if f <= prev {
                return Err(TouchstoneError::NonMonotone { line: lineno, freq: f });
            }
        }
        freqs.push(f);
        let m = Mat4::from_fn(|r, c| {
            let idx = 1 + 2 * (4 * r + c);
            to_complex(block[idx].0, block[idx + 1].0, opts.format)
        });
        mats.push((m, lineno));
    }
    if freqs.len() < 2 {
        return Err(TouchstoneError::Network(RfError::Grid(
            "need at least 2 frequency points".into(),
        )));
    }
    let step = freqs[1] - freqs[0];
    for (i, w) in freqs.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > 1e-6 * step.max(1e-12) {
            return Err(TouchstoneError::NonUniform { line: mats[i + 1].1 });
        }
    }
    let grid = FrequencyGrid::new(freqs[0], step, freqs.len())?;
    let tensor = SParamTensor::from_full(grid, &mats.iter().map(|(m, _)| *m).collect::<Vec<_>>())?;
    for (k, (m, lineno)) in mats.iter().enumerate() {
        let canon = tensor.expand_full(k)?;
        let worst = (0..16)
            .map(|i| (i / 4, i % 4))
            .map(|(r, c)| ((m[(r, c)] - canon[(r, c)]).norm(), r, c))
            .fold((0.0, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
        if worst.0 > SYMMETRY_TOL {
            warnings.push(format!(
                "line {lineno}: S{}{} deviates from its canonical symmetric value by {:.3e}; canonical value kept",
                worst.1 + 1,
                worst.2 + 1,
                worst.0
            ));
        }
    }
    Ok(TouchstoneData { tensor, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SParamTensor {
        let grid = FrequencyGrid::new(0.5, 0.5, 3).unwrap();
        let data = (0..18)
            .map(|i| Complex64::new(0.01 * i as f64 - 0.07, 0.003 * (i * i) as f64 - 0.2))
            .collect();
        SParamTensor::new(grid, data).unwrap()
    }

    #[test]
    fn round_trip_within_tolerance() {
        let t = sample();
        let back = parse_touchstone(&touchstone_string(&t).unwrap()).unwrap();
        assert!(back.warnings.is_empty());
        for (a, b) in t.pack().iter().zip(back.tensor.pack()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(back.tensor.grid().k, 3);
    }

    #[test]
    fn option_line_is_exact() {
        let s = touchstone_string(&sample()).unwrap();
        assert!(s.lines().any(|l| l == "# GHz S RI R 50"));
    }

    #[test]
    fn asymmetric_entry_warns_and_keeps_canonical() {
        let t = sample();
        let text = touchstone_string(&t).unwrap();
        // Corrupt S21 (row 2, first pair) of the first frequency.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let row2 = lines.iter().position(|l| l.starts_with("    ")).unwrap();
        let mut toks: Vec<String> = lines[row2].split_whitespace().map(String::from).collect();
        toks[0] = "0.5".into();
        lines[row2] = format!("   {}", toks.join(" "));
        let parsed = parse_touchstone(&lines.join("\n")).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("S21"));
        let expected = t.get(crate::rfnet::Channel::S12, 0);
        assert!((parsed.tensor.get(crate::rfnet::Channel::S12, 0) - expected).norm() < 1e-9);
    }

    #[test]
    fn mhz_is_rescaled() {
        let text = touchstone_string(&sample()).unwrap();
        let mut out = String::new();
        for line in text.lines() {
            if line.starts_with('#') {
                out.push_str("# MHz S RI R 50\n");
            } else if !line.starts_with(' ') && !line.starts_with('!') {
                let (f, rest) = line.split_once(' ').unwrap();
                let f: f64 = f.parse().unwrap();
                out.push_str(&format!("{} {}\n", f * 1000.0, rest));
            } else {
                out.push_str(line);
                out.push('\n');
            }
        }
        let parsed = parse_touchstone(&out).unwrap();
        let g = parsed.tensor.grid();
        assert!((g.f_start - 0.5).abs() < 1e-12 && (g.f_step - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = touchstone_string(&sample()).unwrap();
        let bad_opt = text.replace("# GHz S RI R 50", "# GHz S XX R 50");
        assert!(matches!(
            parse_touchstone(&bad_opt),
            Err(TouchstoneError::OptionLine { line: 2, .. })
        ));
        let truncated: String = {
            let mut lines: Vec<&str> = text.lines().collect();
            lines.pop();
            lines.join("\n")
        };
        assert!(matches!(
            parse_touchstone(&truncated),
            Err(TouchstoneError::Truncated { line: 13, .. })
        ));
        let swapped = text.replacen("1.000000000000e0 ", "0.200000000000e0 ", 1);
        assert!(matches!(
            parse_touchstone(&swapped),
            Err(TouchstoneError::NonMonotone { line: 7, .. })
        ));
    }
}
