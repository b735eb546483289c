//! `.motifmodel` files: a short text header terminated by `end\n`, followed
//! by little-endian `f32` values (each layer's weights row-major then bias,
//! then input mean/std and output mean/std).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Layer, MlpModel, MlpSpec, Normalizer, SubBandModel, SurrogateError};

pub const CHECKPOINT_EXT: &str = "motifmodel";
const MAGIC: &str = "MOTIFMODEL 1";

/// A model plus optional band placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel<f32>,
    pub band: Option<SubBandMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubBandMeta {
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
    pub lo_ghz: f64,
    pub hi_ghz: f64,
}

impl From<&SubBandModel> for Checkpoint {
    fn from(b: &SubBandModel) -> Self {
        Checkpoint {
            model: b.model.clone(),
            band: Some(SubBandMeta {
                index: b.index,
                lo: b.lo,
                hi: b.hi,
                lo_ghz: b.range_ghz.0,
                hi_ghz: b.range_ghz.1,
            }),
        }
    }
}

impl Checkpoint {
    pub fn into_sub_band(self) -> Result<SubBandModel, SurrogateError> {
        let b = self
            .band
            .ok_or_else(|| SurrogateError::Checkpoint("checkpoint carries no band placement".into()))?;
        Ok(SubBandModel {
            index: b.index,
            lo: b.lo,
            hi: b.hi,
            range_ghz: (b.lo_ghz, b.hi_ghz),
            model: self.model,
        })
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<(), SurrogateError> {
    let m = &c.model;
    let s = m.spec();
    let hidden: Vec<String> = s.hidden.iter().map(|h| h.to_string()).collect();
    let mut header = format!(
        "{MAGIC}\ninput_dim={}\nhidden={}\noutput_dim={}\nactivation={}\nseed={}\nfingerprint={}\n",
        s.input_dim,
        hidden.join(","),
        s.output_dim,
        s.activation,
        m.seed(),
        m.normalizer().fingerprint
    );
    if let Some(b) = &c.band {
        header.push_str(&format!(
            "band_index={}\nband_lo={}\nband_hi={}\nband_lo_ghz={:?}\nband_hi_ghz={:?}\n",
            b.index, b.lo, b.hi, b.lo_ghz, b.hi_ghz
        ));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    let n = m.normalizer();
    let values = m
        .params_flat()
        .into_iter()
        .chain(n.in_mean.iter().copied())
        .chain(n.in_std.iter().copied())
        .chain(n.out_mean.iter().copied())
        .chain(n.out_std.iter().copied());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, SurrogateError> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, SurrogateError> {
    let bad = |m: String| SurrogateError::Checkpoint(m);
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| bad("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let blob = &bytes[end + 5..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a model checkpoint (bad magic)".into()));
    }
    let mut kv = std::collections::BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(bad(format!("duplicate key '{k}'")));
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key '{k}'")));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, SurrogateError> {
        v.parse()
            .map_err(|_| SurrogateError::Checkpoint(format!("bad value for '{k}': '{v}'")))
    }
    let hidden_s = get("hidden")?;
    let hidden = if hidden_s.is_empty() {
        Vec::new()
    } else {
        hidden_s
            .split(',')
            .map(|h| num::<usize>("hidden", h))
            .collect::<Result<Vec<_>, _>>()?
    };
    let activation: Activation = get("activation")?.parse()?;
    let spec = MlpSpec::new(
        num("input_dim", get("input_dim")?)?,
        hidden,
        num("output_dim", get("output_dim")?)?,
        activation,
    )?;
    let seed: u64 = num("seed", get("seed")?)?;
    let fingerprint: u64 = num("fingerprint", get("fingerprint")?)?;
    let band = if kv.contains_key("band_index") {
        Some(SubBandMeta {
            index: num("band_index", get("band_index")?)?,
            lo: num("band_lo", get("band_lo")?)?,
            hi: num("band_hi", get("band_hi")?)?,
            lo_ghz: num("band_lo_ghz", get("band_lo_ghz")?)?,
            hi_ghz: num("band_hi_ghz", get("band_hi_ghz")?)?,
        })
    } else {
        None
    };

    let expected = spec.param_count() + 2 * spec.input_dim + 2 * spec.output_dim;
    if blob.len() != 4 * expected {
        return Err(bad(format!("payload has {} bytes, expected {}", blob.len(), 4 * expected)));
    }
    let mut vals = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f32> { vals.by_ref().take(n).collect() };
    let dims = spec.dims();
    let layers = dims
        .windows(2)
        .map(|w| Layer {
            weights: Array2::from_shape_vec((w[0], w[1]), take(w[0] * w[1])).unwrap(),
            bias: Array1::from_vec(take(w[1])),
        })
        .collect();
    let norm = Normalizer {
        in_mean: Array1::from_vec(take(spec.input_dim)),
        in_std: Array1::from_vec(take(spec.input_dim)),
        out_mean: Array1::from_vec(take(spec.output_dim)),
        out_std: Array1::from_vec(take(spec.output_dim)),
        fingerprint,
    };
    let model = MlpModel::from_parts(spec, layers, norm, seed)?;
    Ok(Checkpoint { model, band })
}
