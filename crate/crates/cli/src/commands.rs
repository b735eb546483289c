use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use motif_core::geometry::{ParamSpace, XfmrGeometry, XfmrTemplate};
use motif_core::inverse::{
    inverse_design, network_with_caps, CostWeights, DesignConfig, DesignStatus, MatchTarget, SurrogateBackend,
};
use motif_core::metrics::{comparison_table, EvalReport};
use motif_core::oracle::{generate_dataset, read_dataset, write_dataset, Dataset};
use motif_core::oracle::simulate;
use motif_core::plot::{line_plot, Series};
use motif_core::rfnet::touchstone_write;
use motif_core::surrogate::{load_checkpoint, CHECKPOINT_EXT};
use motif_core::surrogate::{Activation, SubBandModel, TrainConfig};
use motif_core::transfer::{
    load_ensemble, run_self_transfer, save_ensemble, train_monolith, BandEnsemble, SplitData, TransferSchedule,
};
use motif_core::{FrequencyGrid, SParamTensor};
use num_complex::Complex64;

use crate::config::RunConfig;

/// Distinguishes a completed run that found no acceptable design.
pub struct NoFeasible;

pub fn parse_grid(s: &str) -> Result<FrequencyGrid> {
    match s {
        "ghz100" => Ok(FrequencyGrid::ghz100()),
        "ghz200" => Ok(FrequencyGrid::ghz200()),
        _ => {
            let p: Vec<&str> = s.split(',').map(str::trim).collect();
            let bad = || anyhow!("grid '{s}': expected ghz100, ghz200 or f_start,f_step,K");
            if p.len() != 3 {
                return Err(bad());
            }
            Ok(FrequencyGrid::new(
                p[0].parse().map_err(|_| bad())?,
                p[1].parse().map_err(|_| bad())?,
                p[2].parse().map_err(|_| bad())?,
            )?)
        }
    }
}

pub fn parse_turns(s: &str) -> Result<(u32, u32)> {
    let bad = || anyhow!("turns '{s}': expected M:N such as 1:2");
    let (m, n) = s.split_once(':').ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

pub fn parse_complex(s: &str) -> Result<Complex64> {
    let bad = || anyhow!("impedance '{s}': expected the \"re,im\" form, for example 40,-50");
    let (re, im) = s.split_once(',').ok_or_else(bad)?;
    Ok(Complex64::new(re.trim().parse().map_err(|_| bad())?, im.trim().parse().map_err(|_| bad())?))
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|_| anyhow!("hidden '{s}': expected comma-separated widths")))
        .collect()
}

fn write_snapshot(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.snapshot()).with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        bail!("workers must be >= 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub fn dataset_gen(cfg: &RunConfig) -> Result<()> {
    let template: XfmrTemplate = cfg.get("template")?;
    let samples: usize = cfg.get("samples")?;
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let seed: u64 = cfg.get("seed")?;
    let grid = parse_grid(cfg.raw("grid").unwrap_or("ghz100"))?;
    let workers: usize = cfg.get("workers")?;
    let out: PathBuf = cfg.get("out")?;
    let mut space = ParamSpace::default_for(template);
    if let Some(t) = cfg.raw("turns") {
        let (m, n) = parse_turns(t)?;
        space = space.with_turns(m, n);
    }
    space.validate(template)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let started = Instant::now();
    let ds = pool(workers)?.install(|| generate_dataset(&space, template, samples, &grid, seed))?;
    write_dataset(&ds, &out).with_context(|| format!("cannot write dataset {}", out.display()))?;
    write_snapshot(cfg, &out.with_extension("config"))?;
    let drawn = ds.manifest.samples() + ds.manifest.rejections;
    println!("wrote {} ({} samples, template {template})", out.display(), ds.manifest.samples());
    println!(
        "rejections={} rejection_rate={:.4} wall_time={:.2}s content_hash={}",
        ds.manifest.rejections,
        ds.manifest.rejections as f64 / drawn as f64,
        started.elapsed().as_secs_f64(),
        ds.content_hash()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, SplitData)> {
    let path: PathBuf = cfg.get("dataset")?;
    let ds = read_dataset(&path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    let split = ds.split(cfg.get("split_seed")?);
    let data = SplitData::from_dataset(&ds, &split);
    Ok((ds, data))
}

fn train_cfg(cfg: &RunConfig, epochs_key: &str, patience_key: &str) -> Result<TrainConfig> {
    let c = TrainConfig {
        lr: cfg.get("lr")?,
        batch_size: cfg.get("batch")?,
        epochs: cfg.get(epochs_key)?,
        patience: cfg.get(patience_key)?,
        seed: cfg.get("seed")?,
        ..TrainConfig::default()
    };
    c.validate()?;
    Ok(c)
}

fn monolith(cfg: &RunConfig, data: &SplitData, tc: &TrainConfig, out: &Path) -> Result<()> {
    let hidden = parse_hidden(cfg.raw("hidden").unwrap_or(""))?;
    let activation: Activation = cfg.get("activation")?;
    let (e, r) = train_monolith(data, hidden, activation, tc, cfg.get("seed")?)?;
    ensure_dir(out)?;
    save_ensemble(&e, out)?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for h in &r.history {
        let _ = writeln!(csv, "{},{:.9e},{:.9e}", h.epoch, h.train_loss, h.val_loss);
    }
    fs::write(out.join("loss_history.csv"), csv)?;
    println!(
        "trained monolithic model: {} parameters, best epoch {} (val loss {:.6e}){}",
        e.param_count(),
        r.best_epoch.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
        r.best_val,
        if r.stopped_early { ", stopped early" } else { "" }
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (_, data) = load_data(cfg)?;
    let out: PathBuf = cfg.get("out")?;
    let tc = train_cfg(cfg, "epochs", "patience")?;
    ensure_dir(&out)?;
    write_snapshot(cfg, &out.join("run.config"))?;
    monolith(cfg, &data, &tc, &out)
}

pub fn transfer(cfg: &RunConfig) -> Result<()> {
    let (_, data) = load_data(cfg)?;
    let out: PathBuf = cfg.get("out")?;
    let n_band: usize = cfg.get("nband")?;
    let mut schedule = TransferSchedule::new(n_band, cfg.get("titer")?, parse_hidden(cfg.raw("hidden").unwrap_or(""))?);
    schedule.activation = cfg.get("activation")?;
    schedule.bootstrap = train_cfg(cfg, "bootstrap_epochs", "bootstrap_patience")?;
    schedule.visit = train_cfg(cfg, "visit_epochs", "visit_patience")?;
    schedule.validate(&data.grid)?;
    ensure_dir(&out)?;
    write_snapshot(cfg, &out.join("run.config"))?;
    if n_band == 1 {
        println!(
            "nband=1: a single band is the monolithic model; running `motif train --epochs {} --patience {}`",
            schedule.bootstrap.epochs, schedule.bootstrap.patience
        );
        return monolith(cfg, &data, &schedule.bootstrap, &out);
    }
    let e = run_self_transfer(&data, &schedule, cfg.get("seed")?)?;
    save_ensemble(&e, &out)?;
    let mut csv = String::from("visit,t,direction,band,from,epochs,best_val\n");
    for (i, v) in e.provenance.iter().enumerate() {
        let from = v.from.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{i},{},{},{},{from},{},{:.9e}", v.t, v.direction, v.band, v.epochs, v.best_val);
    }
    fs::write(out.join("loss_history.csv"), csv)?;
    let mut it = String::from("t,val_mae_avg\n");
    for (t, v) in e.iteration_val_mae.iter().enumerate() {
        let _ = writeln!(it, "{},{v:.9e}", t + 1);
    }
    fs::write(out.join("iterations.csv"), it)?;
    println!(
        "self-transfer: {} bands, T={}, {} visits, {} parameters",
        e.n_band(),
        schedule.t_iter,
        e.provenance.len(),
        e.param_count()
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Loads an ensemble directory or a single `.motifmodel` file.
pub fn load_model(path: &Path, grid: &FrequencyGrid) -> Result<BandEnsemble> {
    if !path.exists() {
        bail!(
            "model path {} does not exist; pass an ensemble directory written by `motif train`/`motif transfer` or a .{CHECKPOINT_EXT} file",
            path.display()
        );
    }
    if path.is_dir() {
        return load_ensemble(path).with_context(|| format!("cannot load ensemble {}", path.display()));
    }
    let c = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let band = match c.band {
        Some(_) => c.into_sub_band()?,
        None => SubBandModel {
            index: 1,
            lo: 0,
            hi: grid.k,
            range_ghz: (grid.freq_ghz(0), grid.f_max()),
            model: c.model,
        },
    };
    Ok(BandEnsemble::from_bands(*grid, vec![band])?)
}

fn check_leakage(ds: &Dataset, train: &[usize], eval: &[usize]) -> Result<()> {
    let seen: HashSet<[u8; 32]> = train.iter().map(|&r| ds.sample_hash(r)).collect();
    if let Some(&r) = eval.iter().find(|&&r| seen.contains(&ds.sample_hash(r))) {
        bail!("split leakage: evaluation sample {r} duplicates a training sample");
    }
    Ok(())
}

fn eval_one(e: &BandEnsemble, ds: &Dataset, rows: &[usize]) -> Result<EvalReport> {
    if e.grid != *ds.grid() {
        bail!("model grid {} does not match dataset grid {}", e.grid, ds.grid());
    }
    if let (Some(a), b) = (e.template, ds.manifest.template) {
        if a != b {
            bail!("model was trained on {a} but the dataset holds {b}");
        }
    }
    if !e.dataset_hash.is_empty() && e.dataset_hash != ds.content_hash() {
        eprintln!("warning: model was trained on a different dataset; split leakage cannot be ruled out");
    }
    let (x, y) = ds.select(rows);
    let preds = e.predict_packed(x.view())?;
    Ok(EvalReport::evaluate(preds.view(), y.view(), ds.grid())?)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let path: PathBuf = cfg.get("dataset")?;
    let ds = read_dataset(&path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    let split = ds.split(cfg.get("split_seed")?);
    let rows = match cfg.raw("split").unwrap_or("test") {
        "test" => &split.test,
        "val" => &split.val,
        s => bail!("split '{s}': expected test or val"),
    };
    check_leakage(&ds, &split.train, rows)?;
    let out: PathBuf = cfg.get("out")?;
    ensure_dir(&out)?;
    write_snapshot(cfg, &out.join("run.config"))?;
    let report = if cfg.flag("perfect_copy")? {
        let (_, y) = ds.select(rows);
        EvalReport::evaluate(y.view(), y.view(), ds.grid())?
    } else {
        let model: PathBuf = cfg.get("model")?;
        eval_one(&load_model(&model, ds.grid())?, &ds, rows)?
    };
    fs::write(out.join("mae_freq.csv"), report.to_csv())?;
    fs::write(out.join("summary.txt"), report.summary())?;
    print!("{}", report.summary());
    let curve = |r: &EvalReport| -> Vec<(f64, f64)> {
        r.mae_curve.iter().enumerate().map(|(k, v)| (r.grid.freq_ghz(k), *v)).collect()
    };
    let mut series = vec![Series { name: "model", points: curve(&report), dashed: false }];
    if let Some(b) = cfg.opt::<PathBuf>("baseline")? {
        let base = eval_one(&load_model(&b, ds.grid())?, &ds, rows)?;
        fs::write(out.join("baseline_mae_freq.csv"), base.to_csv())?;
        fs::write(out.join("baseline_summary.txt"), base.summary())?;
        let table = comparison_table("baseline", &base, "model", &report);
        fs::write(out.join("comparison.txt"), &table)?;
        print!("{table}");
        println!(
            "improvement over baseline (MAE_avg,2SRF): {:.1}%",
            100.0 * (base.mae_avg_2srf - report.mae_avg_2srf) / base.mae_avg_2srf
        );
        series.push(Series { name: "baseline", points: curve(&base), dashed: true });
    }
    fs::write(
        out.join("mae_freq.svg"),
        line_plot("MAE vs. frequency", "frequency (GHz)", "MAE_freq", &series, &[]),
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn invdesign(cfg: &RunConfig) -> Result<std::result::Result<(), NoFeasible>> {
    let model: PathBuf = cfg.get("ensemble")?;
    if !model.exists() {
        bail!("ensemble {} does not exist; train one with `motif transfer`", model.display());
    }
    let e = load_ensemble(&model).with_context(|| format!("cannot load ensemble {}", model.display()))?;
    let template = match cfg.opt::<XfmrTemplate>("template")? {
        Some(t) => t,
        None => e.template.ok_or_else(|| anyhow!("ensemble has no template; set 'template'"))?,
    };
    let target = MatchTarget::new(
        parse_complex(cfg.raw("z01").unwrap_or(""))?,
        parse_complex(cfg.raw("z02").unwrap_or(""))?,
        cfg.get("fc")?,
        cfg.get("bw")?,
        cfg.get("rho")?,
    )?;
    let weights = CostWeights { w0: cfg.get("w0")?, w1: cfg.get("w1")?, w2: cfg.get("w2")? };
    let limit: f64 = cfg.get("time_limit")?;
    let dc = DesignConfig {
        c_max_ff: cfg.get("c_max")?,
        sigma0: cfg.get("sigma0")?,
        max_evals: cfg.get("max_evals")?,
        lambda: cfg.opt("lambda")?,
        seed: cfg.get("seed")?,
        workers: cfg.get("workers")?,
        time_limit: (limit > 0.0).then(|| Duration::from_secs_f64(limit)),
        ..DesignConfig::new(template, parse_turns(cfg.raw("turns").unwrap_or(""))?)
    };
    let out: PathBuf = cfg.get("out")?;
    let started = Instant::now();
    let report = inverse_design(&target, &weights, &dc, &SurrogateBackend { ensemble: &e })?;
    let wall = started.elapsed().as_secs_f64();
    ensure_dir(&out)?;
    write_snapshot(cfg, &out.join("run.config"))?;
    report.write_bundle(&out)?;
    print!("{}", report.to_text());
    println!("wall_time={wall:.1}s");
    println!("wrote {}", out.display());
    Ok(match report.status {
        DesignStatus::Success => Ok(()),
        DesignStatus::NoFeasibleDesign => Err(NoFeasible),
    })
}

pub fn export_touchstone(cfg: &RunConfig) -> Result<()> {
    let template: XfmrTemplate = cfg.get("template")?;
    let (m, n) = parse_turns(cfg.raw("turns").unwrap_or(""))?;
    let g = XfmrGeometry {
        template,
        turns_primary: m,
        turns_secondary: n,
        outer_dim: cfg.get("outer")?,
        trace_width: cfg.get("width")?,
        trace_spacing: cfg.get("spacing")?,
        winding_gap: cfg.get("gap")?,
    };
    g.validate()?;
    let grid = parse_grid(cfg.raw("grid").unwrap_or("ghz100"))?;
    let net: SParamTensor = match cfg.raw("source").unwrap_or("oracle") {
        "oracle" => simulate(&g, &grid)?,
        "surrogate" => {
            let model: PathBuf = cfg.get("model").context("source=surrogate needs 'model'")?;
            let e = load_model(&model, &grid)?;
            let x: Vec<f32> = g.feature_vector().iter().map(|&v| v as f32).collect();
            e.predict_full(&x)?
        }
        s => bail!("source '{s}': expected oracle or surrogate"),
    };
    let c1: f64 = cfg.get("c1")?;
    let c2: f64 = cfg.get("c2")?;
    let net = if c1 != 0.0 || c2 != 0.0 { network_with_caps(&net, c1, c2)? } else { net };
    let out: PathBuf = cfg.get("out")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    touchstone_write(&net, &out)?;
    write_snapshot(cfg, &out.with_extension("config"))?;
    println!("wrote {}", out.display());
    Ok(())
}
