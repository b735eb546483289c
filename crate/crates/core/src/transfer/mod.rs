//! Frequency sub-band partitioning and forward/backward self-transfer.
//!
//! Band `i` (counted from 1) owns grid indices `[(i-1)K/N, iK/N)`. Training
//! bootstraps band 1 from a fresh initialization, then runs `T` iterations
//! of a forward sweep (band i warm-starts band i+1) followed by a backward
//! sweep (band i+1 warm-starts band i).

mod persist;

use std::fmt;

use ndarray::{s, Array2, ArrayView2};
use thiserror::Error;

use crate::geometry::XfmrTemplate;
use crate::oracle::{Dataset, Split};
use crate::rfnet::{FrequencyGrid, RfError, SParamTensor, REAL_CHANNELS};
use crate::surrogate::{
    fingerprint_rows, fit, init_from, select_band, Activation, FitResult, MlpModel, MlpSpec, SubBandModel,
    SurrogateError, TrainConfig,
};

pub use persist::{load_ensemble, save_ensemble, ENSEMBLE_MANIFEST};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("N_band = {n_band} does not divide K = {k}")]
    Divisibility { n_band: usize, k: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("band {band} ({direction}, iteration {t}): {source}")]
    Visit {
        band: usize,
        t: usize,
        direction: Direction,
        #[source]
        source: SurrogateError,
    },
    #[error("labels do not match the grid: {0}")]
    Labels(String),
    #[error("normalizer of band {band} was not fit on the training split")]
    Provenance { band: usize },
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Rf(#[from] RfError),
    #[error("ensemble: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Grid placement of one sub-band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
    /// `(lo_ghz, hi_ghz]`.
    pub range_ghz: (f64, f64),
}

pub fn partition(grid: &FrequencyGrid, n_band: usize) -> Result<Vec<Band>, TransferError> {
    if n_band == 0 || grid.k % n_band != 0 {
        return Err(TransferError::Divisibility { n_band, k: grid.k });
    }
    let kb = grid.k / n_band;
    Ok((0..n_band)
        .map(|b| {
            let (lo, hi) = (b * kb, (b + 1) * kb);
            Band {
                index: b + 1,
                lo,
                hi,
                range_ghz: (grid.freq_ghz(lo) - grid.f_step, grid.freq_ghz(hi - 1)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Bootstrap,
    Forward,
    Backward,
    /// Independent fresh training (no transfer), used as a reference.
    Independent,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Bootstrap => "bootstrap",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Independent => "independent",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = TransferError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bootstrap" => Ok(Direction::Bootstrap),
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "independent" => Ok(Direction::Independent),
            _ => Err(TransferError::Format(format!("unknown direction '{s}'"))),
        }
    }
}

/// One training visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    /// Iteration counter; 0 for the bootstrap.
    pub t: usize,
    pub direction: Direction,
    /// Band trained in this visit.
    pub band: usize,
    /// Band whose weights seeded it.
    pub from: Option<usize>,
    pub epochs: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferSchedule {
    pub n_band: usize,
    pub t_iter: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Band-1 bootstrap training.
    pub bootstrap: TrainConfig,
    /// Every later visit.
    pub visit: TrainConfig,
}

impl TransferSchedule {
    pub fn new(n_band: usize, t_iter: usize, hidden: Vec<usize>) -> Self {
        TransferSchedule {
            n_band,
            t_iter,
            hidden,
            activation: Activation::Relu,
            bootstrap: TrainConfig { epochs: 100, patience: 20, ..Default::default() },
            visit: TrainConfig { epochs: 30, patience: 10, ..Default::default() },
        }
    }

    pub fn validate(&self, grid: &FrequencyGrid) -> Result<(), TransferError> {
        partition(grid, self.n_band)?;
        if self.t_iter == 0 {
            return Err(TransferError::Schedule("T must be >= 1".into()));
        }
        self.bootstrap.validate()?;
        self.visit.validate()?;
        Ok(())
    }

    pub fn sub_spec(&self, grid: &FrequencyGrid) -> Result<MlpSpec, TransferError> {
        let kb = grid.k / self.n_band;
        Ok(MlpSpec::new(
            crate::geometry::FEATURE_LEN,
            self.hidden.clone(),
            REAL_CHANNELS * kb,
            self.activation,
        )?)
    }

    /// Visits per run: bootstrap plus two sweeps of `N_band - 1` per iteration.
    pub fn visit_count(&self) -> usize {
        1 + 2 * self.t_iter * (self.n_band - 1)
    }
}

/// Train and validation rows with full-band packed labels.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub grid: FrequencyGrid,
    pub train_x: Array2<f32>,
    pub train_y: Array2<f32>,
    pub val_x: Array2<f32>,
    pub val_y: Array2<f32>,
    pub dataset_hash: String,
    pub template: Option<XfmrTemplate>,
}

impl SplitData {
    pub fn from_dataset(ds: &Dataset, split: &Split) -> Self {
        let (train_x, train_y) = ds.select(&split.train);
        let (val_x, val_y) = ds.select(&split.val);
        SplitData {
            grid: *ds.grid(),
            train_x,
            train_y,
            val_x,
            val_y,
            dataset_hash: ds.content_hash(),
            template: Some(ds.manifest.template),
        }
    }

    fn check(&self) -> Result<(), TransferError> {
        let width = REAL_CHANNELS * self.grid.k;
        if self.train_y.ncols() != width || self.val_y.ncols() != width {
            return Err(TransferError::Labels(format!(
                "label width {} / {}, grid needs {width}",
                self.train_y.ncols(),
                self.val_y.ncols()
            )));
        }
        if self.train_x.nrows() != self.train_y.nrows() || self.val_x.nrows() != self.val_y.nrows() {
            return Err(TransferError::Labels("feature/label row counts differ".into()));
        }
        Ok(())
    }

    fn band_labels(&self, b: &Band) -> (Array2<f32>, Array2<f32>) {
        (
            select_band(self.train_y.view(), self.grid.k, b.lo, b.hi),
            select_band(self.val_y.view(), self.grid.k, b.lo, b.hi),
        )
    }
}

/// Sub-band models tiling the grid, with the visit log that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnsemble {
    pub grid: FrequencyGrid,
    pub bands: Vec<SubBandModel>,
    pub schedule: Option<TransferSchedule>,
    pub seed: u64,
    pub provenance: Vec<Visit>,
    pub dataset_hash: String,
    pub template: Option<XfmrTemplate>,
    /// Validation MAE over the full grid after each iteration `t = 1..T`.
    pub iteration_val_mae: Vec<f64>,
}

fn visit_seed(seed: u64, visit: usize) -> u64 {
    seed ^ (visit as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn shell(spec: &MlpSpec, band: &Band, seed: u64) -> Result<SubBandModel, SurrogateError> {
    Ok(SubBandModel {
        index: band.index,
        lo: band.lo,
        hi: band.hi,
        range_ghz: band.range_ghz,
        model: MlpModel::new(spec.clone(), seed)?,
    })
}

struct Trainer<'a> {
    data: &'a SplitData,
    bands: Vec<Band>,
    labels: Vec<(Array2<f32>, Array2<f32>)>,
    seed: u64,
    log: Vec<Visit>,
}

impl Trainer<'_> {
    fn train(
        &mut self,
        m: SubBandModel,
        cfg: &TrainConfig,
        t: usize,
        direction: Direction,
        from: Option<usize>,
    ) -> Result<SubBandModel, TransferError> {
        let bi = m.index - 1;
        let (ty, vy) = &self.labels[bi];
        let cfg = TrainConfig { seed: visit_seed(self.seed, self.log.len()), ..cfg.clone() };
        let r: FitResult<f32> = fit(&m.model, self.data.train_x.view(), ty.view(), self.data.val_x.view(), vy.view(), &cfg)
            .map_err(|source| TransferError::Visit { band: m.index, t, direction, source })?;
        if cfg.epochs > 0 && r.model.normalizer().fingerprint != fingerprint_rows(self.data.train_x.view(), ty.view()) {
            return Err(TransferError::Provenance { band: m.index });
        }
        self.log.push(Visit {
            t,
            direction,
            band: m.index,
            from,
            epochs: r.history.len(),
            best_val: r.best_val,
        });
        Ok(SubBandModel { model: r.model, ..m })
    }

    fn warm(&self, dst: SubBandModel, src: &SubBandModel) -> Result<SubBandModel, TransferError> {
        let (ty, _) = &self.labels[dst.index - 1];
        Ok(init_from(&dst, src, self.data.train_x.view(), ty.view())?)
    }
}

/// Runs the self-transfer schedule.
pub fn run_self_transfer(data: &SplitData, schedule: &TransferSchedule, seed: u64) -> Result<BandEnsemble, TransferError> {
    data.check()?;
    schedule.validate(&data.grid)?;
    let spec = schedule.sub_spec(&data.grid)?;
    let bands = partition(&data.grid, schedule.n_band)?;
    let labels = bands.iter().map(|b| data.band_labels(b)).collect();
    let mut tr = Trainer { data, bands, labels, seed, log: Vec::new() };
    let n = schedule.n_band;

    let first = shell(&spec, &tr.bands[0], seed)?;
    let first = tr.train(first, &schedule.bootstrap, 0, Direction::Bootstrap, None)?;
    let mut models: Vec<Option<SubBandModel>> = vec![None; n];
    models[0] = Some(first);
    let mut iteration_val_mae = Vec::with_capacity(schedule.t_iter);
    for t in 1..=schedule.t_iter {
        for i in 0..n - 1 {
            let dst = match models[i + 1].take() {
                Some(m) => m,
                None => shell(&spec, &tr.bands[i + 1], visit_seed(seed, tr.log.len()))?,
            };
            let dst = tr.warm(dst, models[i].as_ref().unwrap())?;
            models[i + 1] = Some(tr.train(dst, &schedule.visit, t, Direction::Forward, Some(i + 1))?);
        }
        for i in (0..n - 1).rev() {
            let dst = models[i].take().unwrap();
            let dst = tr.warm(dst, models[i + 1].as_ref().unwrap())?;
            models[i] = Some(tr.train(dst, &schedule.visit, t, Direction::Backward, Some(i + 2))?);
        }
        let snapshot = BandEnsemble::assemble(data, models.iter().flatten().cloned().collect(), Vec::new(), seed, None)?;
        let pred = snapshot.predict_packed(data.val_x.view())?;
        iteration_val_mae.push(if data.val_x.nrows() > 0 {
            crate::metrics::mae_avg(pred.view(), data.val_y.view(), data.grid.k, data.grid.k).map_err(|e| TransferError::Labels(e.to_string()))?
        } else {
            f64::NAN
        });
    }
    let mut e = BandEnsemble::assemble(
        data,
        models.into_iter().map(|m| m.unwrap()).collect(),
        tr.log,
        seed,
        Some(schedule.clone()),
    )?;
    e.iteration_val_mae = iteration_val_mae;
    Ok(e)
}

/// Trains every band from its own fresh initialization with the bootstrap
/// budget, no weight sharing. Reference for band-edge continuity.
pub fn run_independent(data: &SplitData, schedule: &TransferSchedule, seed: u64) -> Result<BandEnsemble, TransferError> {
    data.check()?;
    schedule.validate(&data.grid)?;
    let spec = schedule.sub_spec(&data.grid)?;
    let bands = partition(&data.grid, schedule.n_band)?;
    let labels = bands.iter().map(|b| data.band_labels(b)).collect();
    let mut tr = Trainer { data, bands: bands.clone(), labels, seed, log: Vec::new() };
    let mut models = Vec::with_capacity(bands.len());
    for b in &bands {
        let m = shell(&spec, b, visit_seed(seed, b.index))?;
        models.push(tr.train(m, &schedule.bootstrap, 0, Direction::Independent, None)?);
    }
    BandEnsemble::assemble(data, models, tr.log, seed, Some(schedule.clone()))
}

/// Trains one full-band model. Returned as a single-band ensemble so it can
/// be evaluated and persisted like any other.
pub fn train_monolith(
    data: &SplitData,
    hidden: Vec<usize>,
    activation: Activation,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(BandEnsemble, FitResult<f32>), TransferError> {
    data.check()?;
    let spec = MlpSpec::new(crate::geometry::FEATURE_LEN, hidden, REAL_CHANNELS * data.grid.k, activation)?;
    let band = partition(&data.grid, 1)?[0];
    let m = shell(&spec, &band, seed)?;
    let cfg = TrainConfig { seed: visit_seed(seed, 0), ..cfg.clone() };
    let r = fit(&m.model, data.train_x.view(), data.train_y.view(), data.val_x.view(), data.val_y.view(), &cfg)
        .map_err(|source| TransferError::Visit { band: 1, t: 0, direction: Direction::Bootstrap, source })?;
    let visit = Visit {
        t: 0,
        direction: Direction::Bootstrap,
        band: 1,
        from: None,
        epochs: r.history.len(),
        best_val: r.best_val,
    };
    let e = BandEnsemble::assemble(data, vec![SubBandModel { model: r.model.clone(), ..m }], vec![visit], seed, None)?;
    Ok((e, r))
}

/// Hidden width for a sub-band model so that `n_band` of them match the
/// parameter count of `reference` (a `depth`-layer full-band model).
pub fn equal_budget_width(reference_params: usize, n_band: usize, k: usize, depth: usize) -> usize {
    crate::surrogate::width_for_budget(
        crate::geometry::FEATURE_LEN,
        depth,
        REAL_CHANNELS * k / n_band,
        reference_params / n_band,
    )
}

impl BandEnsemble {
    fn assemble(
        data: &SplitData,
        bands: Vec<SubBandModel>,
        provenance: Vec<Visit>,
        seed: u64,
        schedule: Option<TransferSchedule>,
    ) -> Result<Self, TransferError> {
        let e = BandEnsemble {
            grid: data.grid,
            bands,
            schedule,
            seed,
            provenance,
            dataset_hash: data.dataset_hash.clone(),
            template: data.template,
            iteration_val_mae: Vec::new(),
        };
        e.check_tiling()?;
        Ok(e)
    }

    /// Wraps hand-built sub-band models; they must tile the grid.
    pub fn from_bands(grid: FrequencyGrid, bands: Vec<SubBandModel>) -> Result<Self, TransferError> {
        let e = BandEnsemble {
            grid,
            bands,
            schedule: None,
            seed: 0,
            provenance: Vec::new(),
            dataset_hash: String::new(),
            template: None,
            iteration_val_mae: Vec::new(),
        };
        e.check_tiling()?;
        Ok(e)
    }

    pub fn check_tiling(&self) -> Result<(), TransferError> {
        let mut next = 0;
        for (i, b) in self.bands.iter().enumerate() {
            if b.index != i + 1 || b.lo != next || b.hi <= b.lo {
                return Err(TransferError::Format(format!(
                    "band {} covers [{}, {}) but the tiling expects index {} starting at {next}",
                    b.index,
                    b.lo,
                    b.hi,
                    i + 1
                )));
            }
            if b.model.spec().output_dim != REAL_CHANNELS * b.k_band() {
                return Err(TransferError::Format(format!("band {} output width mismatch", b.index)));
            }
            next = b.hi;
        }
        if next != self.grid.k {
            return Err(TransferError::Format(format!("bands end at {next}, grid has {} points", self.grid.k)));
        }
        Ok(())
    }

    pub fn n_band(&self) -> usize {
        self.bands.len()
    }

    pub fn param_count(&self) -> usize {
        self.bands.iter().map(|b| b.model.param_count()).sum()
    }

    /// Full-band packed predictions, one row per input row.
    pub fn predict_packed(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>, TransferError> {
        let k = self.grid.k;
        let mut out = Array2::<f32>::zeros((x.nrows(), REAL_CHANNELS * k));
        for b in &self.bands {
            let p = b.model.forward_batch(x)?;
            let kb = b.k_band();
            for c in 0..REAL_CHANNELS {
                out.slice_mut(s![.., c * k + b.lo..c * k + b.hi])
                    .assign(&p.slice(s![.., c * kb..(c + 1) * kb]));
            }
        }
        Ok(out)
    }

    pub fn predict_full(&self, x: &[f32]) -> Result<SParamTensor, TransferError> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| TransferError::Labels(e.to_string()))?;
        let p = self.predict_packed(row)?;
        Ok(SParamTensor::unpack_f32(p.row(0).as_slice().unwrap(), self.grid)?)
    }
}

/// Mean absolute prediction jump across internal band edges: for each
/// sample, channel and edge, `|p[first of band i+1] - p[last of band i]|`.
pub fn band_edge_jump(preds: ArrayView2<'_, f32>, k: usize, n_band: usize) -> f64 {
    if n_band < 2 || preds.nrows() == 0 {
        return 0.0;
    }
    let kb = k / n_band;
    let mut total = 0.0;
    let mut count = 0usize;
    for row in preds.outer_iter() {
        for c in 0..REAL_CHANNELS {
            for e in 1..n_band {
                let i = c * k + e * kb;
                total += (row[i] as f64 - row[i - 1] as f64).abs();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Layer, Normalizer};
    use ndarray::Array1;

    #[test]
    fn partition_examples() {
        let g = FrequencyGrid::ghz100();
        let p = partition(&g, 10).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!((p[0].lo, p[0].hi), (0, 20));
        assert!((p[0].range_ghz.0 - 0.0).abs() < 1e-12 && (p[0].range_ghz.1 - 10.0).abs() < 1e-12);
        assert!((p[9].range_ghz.1 - 100.0).abs() < 1e-12);
        let one = partition(&g, 1).unwrap();
        assert_eq!((one[0].lo, one[0].hi), (0, 200));
        assert!(matches!(partition(&g, 7), Err(TransferError::Divisibility { n_band: 7, k: 200 })));
        assert!(partition(&g, 0).is_err());
    }

    #[test]
    fn tiling_covers_every_index_once() {
        let g = FrequencyGrid::ghz200();
        for n in [1, 2, 4, 5, 8, 10, 20, 25, 40, 50, 100, 200] {
            let mut owner = vec![0; g.k];
            for b in partition(&g, n).unwrap() {
                for o in &mut owner[b.lo..b.hi] {
                    *o += 1;
                }
            }
            assert!(owner.iter().all(|&c| c == 1));
        }
    }

    fn constant_band(index: usize, lo: usize, hi: usize, value: f32) -> SubBandModel {
        let out = REAL_CHANNELS * (hi - lo);
        let spec = MlpSpec::new(6, vec![], out, Activation::Relu).unwrap();
        let layers = vec![Layer { weights: Array2::zeros((6, out)), bias: Array1::from_elem(out, value) }];
        SubBandModel {
            index,
            lo,
            hi,
            range_ghz: (lo as f64, hi as f64),
            model: MlpModel::from_parts(spec, layers, Normalizer::identity(6, out), 0).unwrap(),
        }
    }

    #[test]
    fn assembled_prediction_is_a_step() {
        let g = FrequencyGrid::new(1.0, 1.0, 4).unwrap();
        let e = BandEnsemble::from_bands(g, vec![constant_band(1, 0, 2, 0.1), constant_band(2, 2, 4, 0.2)]).unwrap();
        let x = [0.0f32; 6];
        let t = e.predict_full(&x).unwrap();
        for ch in crate::rfnet::CHANNELS {
            let v: Vec<f64> = t.channel(ch).iter().map(|z| z.re).collect();
            assert!((v[0] - 0.1).abs() < 1e-7 && (v[1] - 0.1).abs() < 1e-7);
            assert!((v[2] - 0.2).abs() < 1e-7 && (v[3] - 0.2).abs() < 1e-7);
        }
        let p = e.predict_packed(ndarray::aview2(&[x])).unwrap();
        assert!((band_edge_jump(p.view(), 4, 2) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn single_band_matches_model() {
        let g = FrequencyGrid::new(1.0, 1.0, 3).unwrap();
        let spec = MlpSpec::new(6, vec![5], 36, Activation::Tanh).unwrap();
        let m = MlpModel::<f32>::new(spec, 9).unwrap();
        let b = SubBandModel { index: 1, lo: 0, hi: 3, range_ghz: (0.0, 3.0), model: m.clone() };
        let e = BandEnsemble::from_bands(g, vec![b]).unwrap();
        let x = [0.3f32, 1.0, 2.0, -1.0, 0.5, 0.0];
        let direct = m.forward(&x).unwrap();
        let via = e.predict_packed(ndarray::aview2(&[x])).unwrap();
        assert_eq!(via.row(0).to_vec(), direct);
    }

    #[test]
    fn broken_tiling_rejected() {
        let g = FrequencyGrid::new(1.0, 1.0, 4).unwrap();
        assert!(BandEnsemble::from_bands(g, vec![constant_band(1, 0, 2, 0.1)]).is_err());
        assert!(BandEnsemble::from_bands(g, vec![constant_band(1, 0, 2, 0.1), constant_band(2, 1, 4, 0.1)]).is_err());
    }

    #[test]
    fn visit_counts() {
        for (n, t, v) in [(10, 1, 19), (10, 3, 55), (1, 5, 1), (50, 3, 295)] {
            assert_eq!(TransferSchedule::new(n, t, vec![8]).visit_count(), v);
        }
    }

    #[test]
    fn equal_budget() {
        let mono = MlpSpec::new(6, vec![94; 3], 2400, Activation::Relu).unwrap().param_count();
        let w = equal_budget_width(mono, 10, 200, 3);
        let sub = MlpSpec::new(6, vec![w; 3], 240, Activation::Relu).unwrap().param_count();
        assert!(10 * sub <= mono);
        let bigger = MlpSpec::new(6, vec![w + 1; 3], 240, Activation::Relu).unwrap().param_count();
        assert!(10 * bigger > mono);
    }
}
