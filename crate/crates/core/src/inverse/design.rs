use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    cmaes_minimize, cost_from_curves, match_curves, network_with_caps, to_db, window_weights, Backend, CmaesConfig,
    CmaesStatus, CostWeights, InverseError, MatchCandidate, MatchCurves, MatchTarget, OracleBackend, C_MAX_FF,
};
use crate::geometry::{GeometryError, ParamSpace, XfmrGeometry, XfmrTemplate};
use crate::oracle::simulate;
use crate::plot::{line_plot, HLine, Series};
use crate::rfnet::{touchstone_string, FrequencyGrid, SParamTensor};

/// In-band `|Γ_in|` an acceptable match must stay under.
pub const MATCH_THRESHOLD_DB: f64 = -10.0;
/// `|Γ_in|` values are floored here before dB differences are taken, so a
/// deep null on one side does not dominate the discrepancy.
pub const GAMMA_DB_FLOOR: f64 = -40.0;
/// Cost assigned to candidates whose layout does not fit.
const INFEASIBLE_COST: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub template: XfmrTemplate,
    pub turns: (u32, u32),
    /// Continuous ranges searched for the geometry.
    pub space: ParamSpace,
    pub c_max_ff: f64,
    pub sigma0: f64,
    pub max_evals: usize,
    pub lambda: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub time_limit: Option<std::time::Duration>,
}

impl DesignConfig {
    pub fn new(template: XfmrTemplate, turns: (u32, u32)) -> Self {
        DesignConfig {
            template,
            turns,
            space: ParamSpace::default_for(template),
            c_max_ff: C_MAX_FF,
            sigma0: 0.3,
            max_evals: 3000,
            lambda: None,
            seed: 0,
            workers: 1,
            time_limit: Some(std::time::Duration::from_secs(180)),
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo: Vec<f64> = self.space.continuous_bounds().iter().map(|i| i.lower).collect();
        let mut hi: Vec<f64> = self.space.continuous_bounds().iter().map(|i| i.upper).collect();
        lo.extend([0.0, 0.0]);
        hi.extend([self.c_max_ff, self.c_max_ff]);
        (lo, hi)
    }

    fn candidate(&self, x: &[f64]) -> MatchCandidate {
        MatchCandidate {
            geometry: XfmrGeometry {
                template: self.template,
                turns_primary: self.turns.0,
                turns_secondary: self.turns.1,
                outer_dim: x[0],
                trace_width: x[1],
                trace_spacing: x[2],
                winding_gap: x[3],
            },
            c1_ff: x[4],
            c2_ff: x[5],
        }
    }
}

/// Surrogate and oracle views of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub surrogate: MatchCurves,
    pub oracle: MatchCurves,
    pub surrogate_cost: f64,
    pub oracle_cost: f64,
    /// `|J_surrogate − J_oracle| / J_oracle`.
    pub cost_gap: f64,
    /// Largest in-band `| |Γ|dB_surrogate − |Γ|dB_oracle |` with both sides
    /// floored at [`GAMMA_DB_FLOOR`].
    pub max_gamma_discrepancy_db: f64,
    pub oracle_inband_max_db: f64,
    pub surrogate_inband_max_db: f64,
    /// Oracle 4-port network with the capacitors folded in.
    pub oracle_network: SParamTensor,
}

fn inband_max_db(c: &MatchCurves, target: &MatchTarget) -> f64 {
    c.freqs_ghz
        .iter()
        .zip(&c.gamma)
        .filter(|(f, _)| target.in_band(**f))
        .map(|(_, g)| to_db(*g))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn verify_with_oracle(
    candidate: &MatchCandidate,
    target: &MatchTarget,
    weights: &CostWeights,
    surrogate: &dyn Backend,
) -> Result<Verification, InverseError> {
    let grid = surrogate.grid();
    let oracle = OracleBackend { grid };
    let ww = window_weights(&grid, target);
    let area = candidate.geometry.area_mm2();
    let s_curves = match_curves(candidate, target, surrogate)?;
    let o_curves = match_curves(candidate, target, &oracle)?;
    let surrogate_cost = cost_from_curves(&s_curves, &ww, area, weights);
    let oracle_cost = cost_from_curves(&o_curves, &ww, area, weights);
    let cost_gap = if oracle_cost > 0.0 {
        (surrogate_cost - oracle_cost).abs() / oracle_cost
    } else if surrogate_cost == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let floor = |g: f64| to_db(g).max(GAMMA_DB_FLOOR);
    let max_gamma_discrepancy_db = s_curves
        .freqs_ghz
        .iter()
        .zip(s_curves.gamma.iter().zip(&o_curves.gamma))
        .filter(|(f, _)| target.in_band(**f))
        .map(|(_, (s, o))| (floor(*s) - floor(*o)).abs())
        .fold(0.0, f64::max);
    let net = simulate(&candidate.geometry, &grid)?;
    Ok(Verification {
        oracle_inband_max_db: inband_max_db(&o_curves, target),
        surrogate_inband_max_db: inband_max_db(&s_curves, target),
        surrogate: s_curves,
        oracle: o_curves,
        surrogate_cost,
        oracle_cost,
        cost_gap,
        max_gamma_discrepancy_db,
        oracle_network: network_with_caps(&net, candidate.c1_ff, candidate.c2_ff)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignStatus {
    Success,
    NoFeasibleDesign,
}

impl std::fmt::Display for DesignStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DesignStatus::Success => "success",
            DesignStatus::NoFeasibleDesign => "no-feasible-design",
        })
    }
}

#[derive(Debug, Clone)]
pub struct DesignReport {
    pub target: MatchTarget,
    pub weights: CostWeights,
    pub config: DesignConfig,
    pub candidate: MatchCandidate,
    pub verification: Verification,
    pub status: DesignStatus,
    pub evals: usize,
    pub generations: usize,
    pub search_status: CmaesStatus,
    pub history: Vec<f64>,
    pub backend: String,
}

fn infeasible_cost(e: &GeometryError) -> f64 {
    match e {
        GeometryError::Footprint { outer_dim, needed, .. } => INFEASIBLE_COST * (1.0 + (needed / outer_dim - 1.0).max(0.0)),
        _ => 10.0 * INFEASIBLE_COST,
    }
}

/// Searches geometry and capacitors on `surrogate`, then checks the winner
/// with the oracle. A design that misses the in-band threshold is reported
/// as [`DesignStatus::NoFeasibleDesign`], not as an error.
pub fn inverse_design(
    target: &MatchTarget,
    weights: &CostWeights,
    cfg: &DesignConfig,
    surrogate: &dyn Backend,
) -> Result<DesignReport, InverseError> {
    let grid: FrequencyGrid = surrogate.grid();
    target.check_grid(&grid)?;
    if let Some(trained) = surrogate.template() {
        if trained != cfg.template {
            return Err(InverseError::TemplateMismatch { trained: trained.to_string(), asked: cfg.template.to_string() });
        }
    }
    weights.validate()?;
    ParamSpace { turn_pairs: vec![cfg.turns], ..cfg.space.clone() }
        .validate(cfg.template)
        .map_err(|e| InverseError::Config(e.to_string()))?;
    if !(cfg.c_max_ff > 0.0) {
        return Err(InverseError::Config("c_max must be > 0".into()));
    }
    let ww = window_weights(&grid, target);
    let objective = |x: &[f64]| -> f64 {
        let c = cfg.candidate(x);
        if let Err(e) = c.geometry.validate() {
            return infeasible_cost(&e);
        }
        match match_curves(&c, target, surrogate) {
            Ok(curves) => cost_from_curves(&curves, &ww, c.geometry.area_mm2(), weights),
            Err(_) => f64::INFINITY,
        }
    };
    let (lower, upper) = cfg.bounds();
    let cma = CmaesConfig {
        lambda: cfg.lambda,
        sigma0: cfg.sigma0,
        max_evals: cfg.max_evals,
        seed: cfg.seed,
        workers: cfg.workers,
        time_limit: cfg.time_limit,
        ..CmaesConfig::new(lower, upper)
    };
    let r = cmaes_minimize(objective, &cma)?;
    let candidate = cfg.candidate(&r.best_x);
    let verification = verify_with_oracle(&candidate, target, weights, surrogate)?;
    let status = if verification.oracle_inband_max_db < MATCH_THRESHOLD_DB {
        DesignStatus::Success
    } else {
        DesignStatus::NoFeasibleDesign
    };
    Ok(DesignReport {
        target: *target,
        weights: *weights,
        config: cfg.clone(),
        candidate,
        verification,
        status,
        evals: r.evals,
        generations: r.generations,
        search_status: r.status,
        history: r.history,
        backend: surrogate.name().to_string(),
    })
}

impl DesignReport {
    pub fn to_text(&self) -> String {
        let t = &self.target;
        let g = &self.candidate.geometry;
        let v = &self.verification;
        let mut s = String::new();
        let _ = writeln!(s, "status={}", self.status);
        let _ = writeln!(s, "[target]");
        let _ = writeln!(s, "z01={},{}", t.ports.z01.re, t.ports.z01.im);
        let _ = writeln!(s, "z02={},{}", t.ports.z02.re, t.ports.z02.im);
        let _ = writeln!(s, "fc_ghz={}", t.fc_ghz);
        let _ = writeln!(s, "bw_ghz={}", t.bw_ghz);
        let _ = writeln!(s, "rho={}", t.rho);
        let _ = writeln!(s, "[weights]");
        let _ = writeln!(s, "w0={}\nw1={}\nw2={}", self.weights.w0, self.weights.w1, self.weights.w2);
        let _ = writeln!(s, "[candidate]");
        let _ = writeln!(s, "template={}", g.template.name());
        let _ = writeln!(s, "turns={}:{}", g.turns_primary, g.turns_secondary);
        let _ = writeln!(s, "outer_dim_um={:.6}", g.outer_dim);
        let _ = writeln!(s, "trace_width_um={:.6}", g.trace_width);
        let _ = writeln!(s, "trace_spacing_um={:.6}", g.trace_spacing);
        let _ = writeln!(s, "winding_gap_um={:.6}", g.winding_gap);
        let _ = writeln!(s, "area_mm2={:.6}", g.area_mm2());
        let _ = writeln!(s, "c1_ff={:.6}", self.candidate.c1_ff);
        let _ = writeln!(s, "c2_ff={:.6}", self.candidate.c2_ff);
        let _ = writeln!(s, "[costs]");
        let _ = writeln!(s, "backend={}", self.backend);
        let _ = writeln!(s, "surrogate_cost={:.6}", v.surrogate_cost);
        let _ = writeln!(s, "oracle_cost={:.6}", v.oracle_cost);
        let _ = writeln!(s, "cost_gap={:.4}", v.cost_gap);
        let _ = writeln!(s, "surrogate_inband_max_gamma_db={:.3}", v.surrogate_inband_max_db);
        let _ = writeln!(s, "oracle_inband_max_gamma_db={:.3}", v.oracle_inband_max_db);
        let _ = writeln!(s, "max_inband_gamma_discrepancy_db={:.3}", v.max_gamma_discrepancy_db);
        let _ = writeln!(s, "threshold_db={MATCH_THRESHOLD_DB}");
        let _ = writeln!(s, "[search]");
        let _ = writeln!(s, "evaluations={}", self.evals);
        let _ = writeln!(s, "generations={}", self.generations);
        let _ = writeln!(s, "stop={:?}", self.search_status);
        let _ = writeln!(s, "seed={}", self.config.seed);
        s
    }

    pub fn curves_csv(&self) -> String {
        let v = &self.verification;
        let mut s = String::from("f_GHz,gamma_dB_surrogate,gamma_dB_oracle,L_dB_surrogate,L_dB_oracle\n");
        for i in 0..v.oracle.freqs_ghz.len() {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                v.oracle.freqs_ghz[i],
                to_db(v.surrogate.gamma[i]),
                to_db(v.oracle.gamma[i]),
                to_db(v.surrogate.loss[i]),
                to_db(v.oracle.loss[i])
            );
        }
        s
    }

    fn plot(&self, title: &str, ylabel: &str, pick: impl Fn(&MatchCurves) -> &Vec<f64>, hl: &[HLine<'_>]) -> String {
        let v = &self.verification;
        let pts = |c: &MatchCurves| -> Vec<(f64, f64)> {
            c.freqs_ghz.iter().zip(pick(c)).map(|(f, g)| (*f, to_db(*g).max(-60.0))).collect()
        };
        line_plot(
            title,
            "frequency (GHz)",
            ylabel,
            &[
                Series { name: "surrogate", points: pts(&v.surrogate), dashed: true },
                Series { name: "oracle", points: pts(&v.oracle), dashed: false },
            ],
            hl,
        )
    }

    /// Writes `report.txt`, `curves.csv`, `design.s4p`, `gamma_in.svg` and
    /// `loss.svg` into `dir`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<(), InverseError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.to_text())?;
        fs::write(dir.join("curves.csv"), self.curves_csv())?;
        fs::write(dir.join("design.s4p"), touchstone_string(&self.verification.oracle_network)?)?;
        let thr = [HLine { y: MATCH_THRESHOLD_DB, label: "-10 dB" }];
        fs::write(dir.join("gamma_in.svg"), self.plot("|Γin|", "|Γin| (dB)", |c| &c.gamma, &thr))?;
        fs::write(dir.join("loss.svg"), self.plot("|L|", "|L| (dB)", |c| &c.loss, &[]))?;
        Ok(())
    }
}
