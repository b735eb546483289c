//! Ensemble directories: `band_NN.motifmodel` per band plus a text manifest
//! holding the schedule, seed, dataset hash and visit log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BandEnsemble, TransferError, TransferSchedule, Visit};
use crate::rfnet::FrequencyGrid;
use crate::surrogate::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, CHECKPOINT_EXT};

pub const ENSEMBLE_MANIFEST: &str = "ensemble.manifest";
const MAGIC: &str = "MOTIF-ENSEMBLE 1";

fn band_file(i: usize) -> String {
    format!("band_{i:02}.{CHECKPOINT_EXT}")
}

fn cfg_text(c: &TrainConfig) -> String {
    format!(
        "{:?},{:?},{:?},{:?},{},{},{},{}",
        c.lr, c.beta1, c.beta2, c.eps, c.batch_size, c.epochs, c.patience, c.seed
    )
}

fn parse_cfg(s: &str) -> Result<TrainConfig, TransferError> {
    let bad = || TransferError::Format(format!("bad train config '{s}'"));
    let p: Vec<&str> = s.split(',').collect();
    if p.len() != 8 {
        return Err(bad());
    }
    let f = |i: usize| p[i].parse::<f64>().map_err(|_| bad());
    let u = |i: usize| p[i].parse::<usize>().map_err(|_| bad());
    Ok(TrainConfig {
        lr: f(0)?,
        beta1: f(1)?,
        beta2: f(2)?,
        eps: f(3)?,
        batch_size: u(4)?,
        epochs: u(5)?,
        patience: u(6)?,
        seed: p[7].parse().map_err(|_| bad())?,
    })
}

pub fn save_ensemble(e: &BandEnsemble, dir: impl AsRef<Path>) -> Result<(), TransferError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let g = &e.grid;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "grid={:?},{:?},{}", g.f_start, g.f_step, g.k);
    let _ = writeln!(m, "n_band={}", e.n_band());
    let _ = writeln!(m, "seed={}", e.seed);
    let _ = writeln!(m, "dataset_hash={}", e.dataset_hash);
    let _ = writeln!(m, "template={}", e.template.map(|t| t.name().to_string()).unwrap_or_else(|| "none".into()));
    if let Some(s) = &e.schedule {
        let hidden: Vec<String> = s.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(m, "t_iter={}", s.t_iter);
        let _ = writeln!(m, "hidden={}", hidden.join(","));
        let _ = writeln!(m, "activation={}", s.activation);
        let _ = writeln!(m, "bootstrap={}", cfg_text(&s.bootstrap));
        let _ = writeln!(m, "visit={}", cfg_text(&s.visit));
    }
    let iters: Vec<String> = e.iteration_val_mae.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(m, "iteration_val_mae={}", iters.join(","));
    let _ = writeln!(m, "visits={}", e.provenance.len());
    for v in &e.provenance {
        let _ = writeln!(
            m,
            "visit t={} direction={} band={} from={} epochs={} best_val={:?}",
            v.t,
            v.direction,
            v.band,
            v.from.map(|f| f.to_string()).unwrap_or_else(|| "-".into()),
            v.epochs,
            v.best_val
        );
    }
    for (i, b) in e.bands.iter().enumerate() {
        save_checkpoint(&Checkpoint::from(b), dir.join(band_file(i + 1)))?;
    }
    fs::write(dir.join(ENSEMBLE_MANIFEST), m)?;
    Ok(())
}

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<BandEnsemble, TransferError> {
    let dir = dir.as_ref();
    let path = dir.join(ENSEMBLE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| {
        TransferError::Format(format!("cannot read {}: {e}", path.display()))
    })?;
    let bad = |m: String| TransferError::Format(m);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("{} is not an ensemble manifest", path.display())));
    }
    let mut kv = BTreeMap::new();
    let mut visits = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("visit ") {
            visits.push(parse_visit(rest)?);
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line '{line}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing key '{k}'")));
    let grid_s = get("grid")?;
    let gp: Vec<&str> = grid_s.split(',').collect();
    if gp.len() != 3 {
        return Err(bad(format!("bad grid '{grid_s}'")));
    }
    let grid = FrequencyGrid::new(
        gp[0].parse().map_err(|_| bad(format!("bad grid '{grid_s}'")))?,
        gp[1].parse().map_err(|_| bad(format!("bad grid '{grid_s}'")))?,
        gp[2].parse().map_err(|_| bad(format!("bad grid '{grid_s}'")))?,
    )?;
    let n_band: usize = get("n_band")?.parse().map_err(|_| bad("bad n_band".into()))?;
    let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
    let template = match get("template")?.as_str() {
        "none" => None,
        t => Some(t.parse().map_err(|_| bad(format!("unknown template '{t}'")))?),
    };
    let schedule = if kv.contains_key("t_iter") {
        let hidden_s = get("hidden")?;
        let hidden = if hidden_s.is_empty() {
            Vec::new()
        } else {
            hidden_s
                .split(',')
                .map(|h| h.parse().map_err(|_| bad(format!("bad hidden '{hidden_s}'"))))
                .collect::<Result<_, _>>()?
        };
        Some(TransferSchedule {
            n_band,
            t_iter: get("t_iter")?.parse().map_err(|_| bad("bad t_iter".into()))?,
            hidden,
            activation: get("activation")?.parse()?,
            bootstrap: parse_cfg(&get("bootstrap")?)?,
            visit: parse_cfg(&get("visit")?)?,
        })
    } else {
        None
    };
    let iter_s = get("iteration_val_mae")?;
    let iteration_val_mae = if iter_s.is_empty() {
        Vec::new()
    } else {
        iter_s
            .split(',')
            .map(|v| v.parse().map_err(|_| bad(format!("bad iteration value '{v}'"))))
            .collect::<Result<_, _>>()?
    };
    let n_visits: usize = get("visits")?.parse().map_err(|_| bad("bad visits".into()))?;
    if n_visits != visits.len() {
        return Err(bad(format!("manifest declares {n_visits} visits, lists {}", visits.len())));
    }
    let mut bands = Vec::with_capacity(n_band);
    for i in 1..=n_band {
        let p = dir.join(band_file(i));
        let c = load_checkpoint(&p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
        bands.push(c.into_sub_band()?);
    }
    let e = BandEnsemble {
        grid,
        bands,
        schedule,
        seed,
        provenance: visits,
        dataset_hash: get("dataset_hash")?,
        template,
        iteration_val_mae,
    };
    e.check_tiling()?;
    Ok(e)
}

fn parse_visit(s: &str) -> Result<Visit, TransferError> {
    let bad = || TransferError::Format(format!("bad visit line '{s}'"));
    let mut kv = BTreeMap::new();
    for tok in s.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(bad)?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(bad);
    Ok(Visit {
        t: get("t")?.parse().map_err(|_| bad())?,
        direction: get("direction")?.parse()?,
        band: get("band")?.parse().map_err(|_| bad())?,
        from: match get("from")? {
            "-" => None,
            f => Some(f.parse().map_err(|_| bad())?),
        },
        epochs: get("epochs")?.parse().map_err(|_| bad())?,
        best_val: get("best_val")?.parse().map_err(|_| bad())?,
    })
}
