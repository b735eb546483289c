//! `motif`: dataset generation, surrogate training, evaluation and inverse
//! design from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure, 4 no feasible design.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motif_core::inverse::InverseError;
use motif_core::oracle::OracleError;
use motif_core::rfnet::RfError;
use motif_core::surrogate::SurrogateError;
use motif_core::transfer::TransferError;

use config::{key, Default as D, Key, RunConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_NO_FEASIBLE: u8 = 4;
const DEFAULT_WORKERS: &str = "4";

#[derive(Parser)]
#[command(name = "motif", version, about = "Transformer S-parameter surrogates and inverse matching design")]
struct Cli {
    /// Worker threads for dataset generation and CMA-ES (MOTIF_WORKERS also sets this).
    #[arg(long, global = true)]
    workers: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dataset operations.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train one full-band model.
    Train(TrainArgs),
    /// Train a sub-band ensemble with forward/backward self-transfer.
    Transfer(TransferArgs),
    /// Score a model on the held-out split.
    Eval(EvalArgs),
    /// Search geometry and matching capacitors for an impedance target.
    Invdesign(InvArgs),
    /// Export networks.
    Export {
        #[command(subcommand)]
        cmd: ExportCmd,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate a dataset with the lumped oracle.
    Gen(GenArgs),
}

#[derive(Subcommand)]
enum ExportCmd {
    /// Write a .s4p file for one geometry.
    Touchstone(ExportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// key=value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// ghz100, ghz200 or f_start,f_step,K.
    #[arg(long)]
    grid: Option<String>,
    /// Restrict to one turn pair, e.g. 1:2.
    #[arg(long)]
    turns: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

const GEN_KEYS: &[Key] = &[
    key("template", D::Value("mn")),
    key("samples", D::Required),
    key("seed", D::Value("0")),
    key("grid", D::Value("ghz100")),
    key("turns", D::Optional),
    key("out", D::Value("dataset.motif")),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Hidden widths, e.g. 256,256.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
}

const TRAIN_KEYS: &[Key] = &[
    key("dataset", D::Required),
    key("out", D::Value("model")),
    key("hidden", D::Value("256,256")),
    key("activation", D::Value("relu")),
    key("epochs", D::Value("200")),
    key("patience", D::Value("20")),
    key("lr", D::Value("0.001")),
    key("batch", D::Value("64")),
    key("seed", D::Value("0")),
    key("split_seed", D::Value("0")),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    nband: Option<String>,
    #[arg(long)]
    titer: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    bootstrap_epochs: Option<String>,
    #[arg(long)]
    bootstrap_patience: Option<String>,
    #[arg(long)]
    visit_epochs: Option<String>,
    #[arg(long)]
    visit_patience: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
}

const TRANSFER_KEYS: &[Key] = &[
    key("dataset", D::Required),
    key("out", D::Value("ensemble")),
    key("nband", D::Value("10")),
    key("titer", D::Value("3")),
    key("hidden", D::Value("256,256")),
    key("activation", D::Value("relu")),
    key("bootstrap_epochs", D::Value("100")),
    key("bootstrap_patience", D::Value("20")),
    key("visit_epochs", D::Value("30")),
    key("visit_patience", D::Value("10")),
    key("lr", D::Value("0.001")),
    key("batch", D::Value("64")),
    key("seed", D::Value("0")),
    key("split_seed", D::Value("0")),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ensemble directory or .motifmodel file.
    #[arg(long)]
    model: Option<String>,
    /// Second model to compare against.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    /// test or val.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Score the labels against themselves (harness check, needs no model).
    #[arg(long)]
    perfect_copy: bool,
}

const EVAL_KEYS: &[Key] = &[
    key("model", D::Optional),
    key("baseline", D::Optional),
    key("dataset", D::Required),
    key("split", D::Value("test")),
    key("split_seed", D::Value("0")),
    key("out", D::Value("eval")),
    key("perfect_copy", D::Value("false")),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

#[derive(Args)]
struct InvArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    turns: Option<String>,
    /// Source impedance as re,im.
    #[arg(long, allow_hyphen_values = true)]
    z01: Option<String>,
    /// Load impedance as re,im.
    #[arg(long, allow_hyphen_values = true)]
    z02: Option<String>,
    #[arg(long)]
    fc: Option<String>,
    #[arg(long)]
    bw: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    w0: Option<String>,
    #[arg(long)]
    w1: Option<String>,
    #[arg(long)]
    w2: Option<String>,
    #[arg(long)]
    c_max: Option<String>,
    #[arg(long)]
    sigma0: Option<String>,
    #[arg(long)]
    max_evals: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Seconds; 0 disables the cap.
    #[arg(long)]
    time_limit: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

const INV_KEYS: &[Key] = &[
    key("ensemble", D::Required),
    key("template", D::Optional),
    key("turns", D::Value("1:2")),
    key("z01", D::Required),
    key("z02", D::Required),
    key("fc", D::Required),
    key("bw", D::Required),
    key("rho", D::Value("1")),
    key("w0", D::Value("1")),
    key("w1", D::Value("1")),
    key("w2", D::Value("1")),
    key("c_max", D::Value("500")),
    key("sigma0", D::Value("0.3")),
    key("max_evals", D::Value("3000")),
    key("lambda", D::Optional),
    key("seed", D::Value("0")),
    key("time_limit", D::Value("180")),
    key("out", D::Value("design")),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// oracle or surrogate.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    turns: Option<String>,
    #[arg(long)]
    outer: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    spacing: Option<String>,
    #[arg(long)]
    gap: Option<String>,
    /// Shunt capacitor across ports 1-2, fF.
    #[arg(long)]
    c1: Option<String>,
    /// Shunt capacitor across ports 3-4, fF.
    #[arg(long)]
    c2: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

const EXPORT_KEYS: &[Key] = &[
    key("source", D::Value("oracle")),
    key("model", D::Optional),
    key("template", D::Value("mn")),
    key("turns", D::Value("1:1")),
    key("outer", D::Required),
    key("width", D::Required),
    key("spacing", D::Required),
    key("gap", D::Required),
    key("c1", D::Value("0")),
    key("c2", D::Value("0")),
    key("grid", D::Value("ghz100")),
    key("out", D::Required),
    key("workers", D::Value(DEFAULT_WORKERS)),
];

/// Flag beats MOTIF_WORKERS, which beats the config file.
fn workers(flag: Option<String>) -> Option<String> {
    flag.or_else(|| std::env::var("MOTIF_WORKERS").ok().filter(|v| !v.trim().is_empty()))
}

fn is_numeric_rf(e: &RfError) -> bool {
    matches!(
        e,
        RfError::Singular { .. } | RfError::NonFinite { .. } | RfError::SingularTermination(_) | RfError::NonPhysical { .. }
    )
}

fn is_numeric_oracle(e: &OracleError) -> bool {
    match e {
        OracleError::Conditioning { .. } => true,
        OracleError::Rf(r) => is_numeric_rf(r),
        _ => false,
    }
}

fn is_numeric_surrogate(e: &SurrogateError) -> bool {
    matches!(e, SurrogateError::Diverged { .. })
}

fn is_numeric_transfer(e: &TransferError) -> bool {
    match e {
        TransferError::Visit { source, .. } | TransferError::Surrogate(source) => is_numeric_surrogate(source),
        TransferError::Rf(r) => is_numeric_rf(r),
        _ => false,
    }
}

fn is_numeric_inverse(e: &InverseError) -> bool {
    match e {
        InverseError::Rf(r) => is_numeric_rf(r),
        InverseError::Oracle(o) => is_numeric_oracle(o),
        InverseError::Transfer(t) => is_numeric_transfer(t),
        InverseError::Candidate { source, .. } => is_numeric_inverse(source),
        _ => false,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e.chain().any(|c| {
        c.downcast_ref::<RfError>().is_some_and(is_numeric_rf)
            || c.downcast_ref::<OracleError>().is_some_and(is_numeric_oracle)
            || c.downcast_ref::<SurrogateError>().is_some_and(is_numeric_surrogate)
            || c.downcast_ref::<TransferError>().is_some_and(is_numeric_transfer)
            || c.downcast_ref::<InverseError>().is_some_and(is_numeric_inverse)
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let w = workers(cli.workers);
    match cli.cmd {
        Cmd::Dataset { cmd: DatasetCmd::Gen(a) } => {
            let cfg = RunConfig::resolve(
                "dataset gen",
                GEN_KEYS,
                a.config.as_deref(),
                vec![
                    ("template", a.template),
                    ("samples", a.samples),
                    ("seed", a.seed),
                    ("grid", a.grid),
                    ("turns", a.turns),
                    ("out", a.out),
                    ("workers", w),
                ],
            )?;
            commands::dataset_gen(&cfg)?;
        }
        Cmd::Train(a) => {
            let cfg = RunConfig::resolve(
                "train",
                TRAIN_KEYS,
                a.config.as_deref(),
                vec![
                    ("dataset", a.dataset),
                    ("out", a.out),
                    ("hidden", a.hidden),
                    ("activation", a.activation),
                    ("epochs", a.epochs),
                    ("patience", a.patience),
                    ("lr", a.lr),
                    ("batch", a.batch),
                    ("seed", a.seed),
                    ("split_seed", a.split_seed),
                    ("workers", w),
                ],
            )?;
            commands::train(&cfg)?;
        }
        Cmd::Transfer(a) => {
            let cfg = RunConfig::resolve(
                "transfer",
                TRANSFER_KEYS,
                a.config.as_deref(),
                vec![
                    ("dataset", a.dataset),
                    ("out", a.out),
                    ("nband", a.nband),
                    ("titer", a.titer),
                    ("hidden", a.hidden),
                    ("activation", a.activation),
                    ("bootstrap_epochs", a.bootstrap_epochs),
                    ("bootstrap_patience", a.bootstrap_patience),
                    ("visit_epochs", a.visit_epochs),
                    ("visit_patience", a.visit_patience),
                    ("lr", a.lr),
                    ("batch", a.batch),
                    ("seed", a.seed),
                    ("split_seed", a.split_seed),
                    ("workers", w),
                ],
            )?;
            commands::transfer(&cfg)?;
        }
        Cmd::Eval(a) => {
            let cfg = RunConfig::resolve(
                "eval",
                EVAL_KEYS,
                a.config.as_deref(),
                vec![
                    ("model", a.model),
                    ("baseline", a.baseline),
                    ("dataset", a.dataset),
                    ("split", a.split),
                    ("split_seed", a.split_seed),
                    ("out", a.out),
                    ("perfect_copy", a.perfect_copy.then(|| "true".to_string())),
                    ("workers", w),
                ],
            )?;
            if !cfg.flag("perfect_copy")? && cfg.raw("model").is_none() {
                anyhow::bail!("eval: missing required setting 'model' (flag --model or config key)");
            }
            commands::eval(&cfg)?;
        }
        Cmd::Invdesign(a) => {
            let cfg = RunConfig::resolve(
                "invdesign",
                INV_KEYS,
                a.config.as_deref(),
                vec![
                    ("ensemble", a.ensemble),
                    ("template", a.template),
                    ("turns", a.turns),
                    ("z01", a.z01),
                    ("z02", a.z02),
                    ("fc", a.fc),
                    ("bw", a.bw),
                    ("rho", a.rho),
                    ("w0", a.w0),
                    ("w1", a.w1),
                    ("w2", a.w2),
                    ("c_max", a.c_max),
                    ("sigma0", a.sigma0),
                    ("max_evals", a.max_evals),
                    ("lambda", a.lambda),
                    ("seed", a.seed),
                    ("time_limit", a.time_limit),
                    ("out", a.out),
                    ("workers", w),
                ],
            )?;
            if commands::invdesign(&cfg)?.is_err() {
                eprintln!("no feasible design: oracle-verified in-band |Γin| does not reach -10 dB");
                return Ok(EXIT_NO_FEASIBLE);
            }
        }
        Cmd::Export { cmd: ExportCmd::Touchstone(a) } => {
            let cfg = RunConfig::resolve(
                "export touchstone",
                EXPORT_KEYS,
                a.config.as_deref(),
                vec![
                    ("source", a.source),
                    ("model", a.model),
                    ("template", a.template),
                    ("turns", a.turns),
                    ("outer", a.outer),
                    ("width", a.width),
                    ("spacing", a.spacing),
                    ("gap", a.gap),
                    ("c1", a.c1),
                    ("c2", a.c2),
                    ("grid", a.grid),
                    ("out", a.out),
                    ("workers", w),
                ],
            )?;
            commands::export_touchstone(&cfg)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
