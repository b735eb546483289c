//! Dataset generation and the `MOTIF1` binary container.
//!
//! Layout (little-endian): magic `MOTIF1\0`, then `u32` sample count, `u32`
//! feature length, `u32` K, `f64` f_start GHz, `f64` f_step GHz; then per
//! sample the feature vector as `f32[feature_len]` followed by the packed
//! labels as `f32[12 K]`. A UTF-8 sidecar (`<file>.manifest`) carries the
//! run metadata and one geometry record per sample.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{simulate, OracleError, ORACLE_VERSION};
use crate::geometry::{ParamSpace, XfmrGeometry, XfmrTemplate, FEATURE_LEN};
use crate::rfnet::{detect_srf, FrequencyGrid, REAL_CHANNELS};

pub const MAGIC: &[u8; 7] = b"MOTIF1\0";

/// Samples whose SRF falls below this fraction of `f_max` are redrawn.
pub const SRF_REJECT_FRACTION: f64 = 0.15;

const MAX_DRAWS_PER_SAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub template: XfmrTemplate,
    pub grid: FrequencyGrid,
    pub oracle_version: String,
    pub seed: u64,
    pub rejections: usize,
    pub geometries: Vec<XfmrGeometry>,
}

impl DatasetManifest {
    pub fn samples(&self) -> usize {
        self.geometries.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# motif dataset manifest");
        let _ = writeln!(s, "template={}", self.template);
        let _ = writeln!(s, "samples={}", self.samples());
        let _ = writeln!(s, "grid={}", self.grid);
        let _ = writeln!(s, "oracle_version={}", self.oracle_version);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "rejections={}", self.rejections);
        let _ = writeln!(s, "split=80/10/10");
        for (i, g) in self.geometries.iter().enumerate() {
            let _ = writeln!(s, "\n[sample {i}]");
            s.push_str(&g.to_record());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, OracleError> {
        let bad = |m: String| OracleError::Format(format!("manifest: {m}"));
        let mut sections = text.split("\n[sample ");
        let header = sections.next().unwrap_or("");
        let mut fields = std::collections::HashMap::new();
        for line in header.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing '{k}'")));
        let template: XfmrTemplate = get("template")?.parse()?;
        let grid_parts: Vec<f64> = get("grid")?
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("grid: {e}")))?;
        if grid_parts.len() != 3 {
            return Err(bad("grid needs f_start,f_step,K".into()));
        }
        let grid = FrequencyGrid::new(grid_parts[0], grid_parts[1], grid_parts[2] as usize)?;
        let parse_u = |k: &str| -> Result<u64, OracleError> {
            get(k)?.parse::<u64>().map_err(|e| bad(format!("{k}: {e}")))
        };
        let samples = parse_u("samples")? as usize;
        let mut geometries = Vec::with_capacity(samples);
        for (i, sec) in sections.enumerate() {
            let (idx, body) = sec
                .split_once(']')
                .ok_or_else(|| bad("unterminated sample header".into()))?;
            if idx.trim().parse::<usize>().ok() != Some(i) {
                return Err(bad(format!("sample header {idx} out of order")));
            }
            geometries.push(XfmrGeometry::from_record(body)?);
        }
        if geometries.len() != samples {
            return Err(bad(format!("{} geometry records for {samples} samples", geometries.len())));
        }
        Ok(DatasetManifest {
            template,
            grid,
            oracle_version: get("oracle_version")?.clone(),
            seed: parse_u("seed")?,
            rejections: parse_u("rejections")? as usize,
            geometries,
        })
    }
}

/// Feature rows and packed label rows, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub features: Array2<f32>,
    pub labels: Array2<f32>,
}

/// Index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.manifest.grid
    }

    /// Seeded 80/10/10 shuffle split.
    pub fn split(&self, seed: u64) -> Split {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        Split {
            train: idx[..n_train].to_vec(),
            val: idx[n_train..n_train + n_val].to_vec(),
            test: idx[n_train + n_val..].to_vec(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> (Array2<f32>, Array2<f32>) {
        (
            self.features.select(ndarray::Axis(0), rows),
            self.labels.select(ndarray::Axis(0), rows),
        )
    }

    /// SHA-256 over the feature and label bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for row in 0..self.len() {
            h.update(row_bytes(self.features.row(row)));
            h.update(row_bytes(self.labels.row(row)));
        }
        hex(&h.finalize())
    }

    /// Per-sample digest of (features, labels).
    pub fn sample_hash(&self, row: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(row_bytes(self.features.row(row)));
        h.update(row_bytes(self.labels.row(row)));
        h.finalize().into()
    }
}

fn row_bytes(row: ArrayView1<'_, f32>) -> Vec<u8> {
    row.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws, simulates and SRF-screens `n_samples` geometries. Sample `i`
/// uses its own ChaCha stream, so results do not depend on worker count.
pub fn generate_dataset(
    space: &ParamSpace,
    template: XfmrTemplate,
    n_samples: usize,
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<Dataset, OracleError> {
    if n_samples == 0 {
        return Err(OracleError::NoSamples);
    }
    space.validate(template)?;
    let threshold = SRF_REJECT_FRACTION * grid.f_max();
    let drawn: Vec<(XfmrGeometry, Vec<f32>, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rejected = 0;
            loop {
                let g = space.sample_with(template, &mut rng)?;
                let t = simulate(&g, grid)?;
                if detect_srf(&t).ghz >= threshold {
                    let labels = t.pack().into_iter().map(|x| x as f32).collect();
                    return Ok((g, labels, rejected));
                }
                rejected += 1;
                if rejected >= MAX_DRAWS_PER_SAMPLE {
                    return Err(OracleError::RejectionRate {
                        rate: 1.0,
                        rejected,
                        accepted: 0,
                    });
                }
            }
        })
        .collect::<Result<_, OracleError>>()?;
    let rejections: usize = drawn.iter().map(|d| d.2).sum();
    let rate = rejections as f64 / (rejections + n_samples) as f64;
    if rate > 0.5 {
        return Err(OracleError::RejectionRate {
            rate,
            rejected: rejections,
            accepted: n_samples,
        });
    }
    let label_len = REAL_CHANNELS * grid.k;
    let mut features = Array2::<f32>::zeros((n_samples, FEATURE_LEN));
    let mut labels = Array2::<f32>::zeros((n_samples, label_len));
    let mut geometries = Vec::with_capacity(n_samples);
    for (i, (g, lab, _)) in drawn.into_iter().enumerate() {
        for (j, v) in g.feature_vector().iter().enumerate() {
            features[[i, j]] = *v as f32;
        }
        labels.row_mut(i).assign(&ArrayView1::from(&lab));
        geometries.push(g);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            template,
            grid: *grid,
            oracle_version: ORACLE_VERSION.to_string(),
            seed,
            rejections,
            geometries,
        },
        features,
        labels,
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), OracleError> {
    let path = path.as_ref();
    let grid = ds.grid();
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(ds.len() as u32).to_le_bytes())?;
    w.write_all(&(ds.features.ncols() as u32).to_le_bytes())?;
    w.write_all(&(grid.k as u32).to_le_bytes())?;
    w.write_all(&grid.f_start.to_le_bytes())?;
    w.write_all(&grid.f_step.to_le_bytes())?;
    for i in 0..ds.len() {
        w.write_all(&row_bytes(ds.features.row(i)))?;
        w.write_all(&row_bytes(ds.labels.row(i)))?;
    }
    w.flush()?;
    fs::write(manifest_path(path), ds.manifest.to_text())?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, OracleError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| OracleError::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 35 || &bytes[..7] != MAGIC {
        return Err(bad("missing MOTIF1 magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (n, flen, k) = (u32_at(7), u32_at(11), u32_at(15));
    let grid = FrequencyGrid::new(f64_at(19), f64_at(27), k)?;
    let llen = REAL_CHANNELS * k;
    let body = &bytes[35..];
    if body.len() != n * (flen + llen) * 4 {
        return Err(bad(&format!(
            "body has {} bytes, header implies {}",
            body.len(),
            n * (flen + llen) * 4
        )));
    }
    let mut floats = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut features = Array2::<f32>::zeros((n, flen));
    let mut labels = Array2::<f32>::zeros((n, llen));
    for i in 0..n {
        for v in features.row_mut(i).iter_mut() {
            *v = floats.next().unwrap();
        }
        for v in labels.row_mut(i).iter_mut() {
            *v = floats.next().unwrap();
        }
    }
    let manifest = DatasetManifest::from_text(&fs::read_to_string(manifest_path(path))?)?;
    if manifest.samples() != n {
        return Err(bad(&format!("manifest lists {} samples, file has {n}", manifest.samples())));
    }
    if manifest.grid != grid {
        return Err(bad("manifest grid differs from file header"));
    }
    Ok(Dataset { manifest, features, labels })
}
