use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn motif(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motif"))
        .args(args)
        .current_dir(dir)
        .env_remove("MOTIF_WORKERS")
        .output()
        .expect("spawn motif")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

/// One small 1:2 dataset plus a quickly trained ensemble and monolith, shared
/// by every test in this file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let o = motif(&root, &["dataset", "gen", "--template", "mn", "--turns", "1:2", "--samples", "120", "--seed", "3", "--out", "d.motif"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = motif(
            &root,
            &[
                "transfer", "--dataset", "d.motif", "--nband", "10", "--titer", "1", "--hidden", "16",
                "--bootstrap-epochs", "10", "--visit-epochs", "3", "--out", "ens",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = motif(&root, &["train", "--dataset", "d.motif", "--hidden", "16", "--epochs", "10", "--out", "mono"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture { _dir: dir, root }
    })
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn copy_dataset(to: &Path) {
    let f = fixture();
    for name in ["d.motif", "d.motif.manifest"] {
        let src = f.root.join(name);
        if src.exists() {
            fs::copy(src, to.join(name)).unwrap();
        }
    }
}

#[test]
fn zero_samples_is_usage_error_without_output() {
    let d = scratch();
    let o = motif(d.path(), &["dataset", "gen", "--samples", "0", "--out", "z.motif"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("samples"));
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 0);
}

#[test]
fn dataset_generation_is_reproducible() {
    let d = scratch();
    for out in ["a.motif", "b.motif"] {
        let o = motif(d.path(), &["dataset", "gen", "--template", "11", "--samples", "24", "--seed", "7", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("rejection_rate="));
        assert!(stdout(&o).contains("wall_time="));
    }
    assert_eq!(fs::read(d.path().join("a.motif")).unwrap(), fs::read(d.path().join("b.motif")).unwrap());
    let snap = fs::read_to_string(d.path().join("a.config")).unwrap();
    assert!(snap.contains("samples=24") && snap.contains("template=11"), "{snap}");
}

#[test]
fn worker_count_does_not_change_dataset() {
    let d = scratch();
    let o = motif(d.path(), &["dataset", "gen", "--samples", "16", "--workers", "1", "--out", "a.motif"]);
    assert_eq!(code(&o), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_motif"))
        .args(["dataset", "gen", "--samples", "16", "--out", "b.motif"])
        .current_dir(d.path())
        .env("MOTIF_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(d.path().join("b.config")).unwrap().contains("workers=3"));
    assert_eq!(fs::read(d.path().join("a.motif")).unwrap(), fs::read(d.path().join("b.motif")).unwrap());
}

#[test]
fn config_file_and_flag_override() {
    let d = scratch();
    fs::write(d.path().join("g.cfg"), "template=11\nsamples=8\nseed=1\nout=g.motif\n").unwrap();
    let o = motif(d.path(), &["dataset", "gen", "--config", "g.cfg", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let snap = fs::read_to_string(d.path().join("g.config")).unwrap();
    assert!(snap.contains("seed=5") && snap.contains("samples=8"));
    fs::write(d.path().join("bad.cfg"), "samples=8\ncolour=blue\n").unwrap();
    let o = motif(d.path(), &["dataset", "gen", "--config", "bad.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown key 'colour'"), "{}", stderr(&o));
}

#[test]
fn indivisible_band_count_names_both_numbers() {
    let d = scratch();
    copy_dataset(d.path());
    let o = motif(d.path(), &["transfer", "--dataset", "d.motif", "--nband", "7", "--titer", "1"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains('7') && e.contains("200"), "{e}");
}

#[test]
fn transfer_writes_provenance_of_expected_length() {
    let d = scratch();
    copy_dataset(d.path());
    let o = motif(
        d.path(),
        &[
            "transfer", "--dataset", "d.motif", "--nband", "10", "--titer", "3", "--hidden", "8",
            "--bootstrap-epochs", "2", "--visit-epochs", "1", "--out", "e",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(d.path().join("e/ensemble.manifest")).unwrap();
    assert!(manifest.contains("visits=55"));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("visit ")).count(), 55);
    let bands = fs::read_dir(d.path().join("e")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "motifmodel")
    });
    assert_eq!(bands.count(), 10);
    assert_eq!(fs::read_to_string(d.path().join("e/loss_history.csv")).unwrap().lines().count(), 56);
}

#[test]
fn single_band_transfer_matches_train() {
    let d = scratch();
    copy_dataset(d.path());
    let common = ["--dataset", "d.motif", "--hidden", "8", "--seed", "4"];
    let mut a = vec!["transfer", "--nband", "1", "--bootstrap-epochs", "3", "--bootstrap-patience", "5", "--out", "t"];
    a.extend(common);
    let o = motif(d.path(), &a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("motif train --epochs 3 --patience 5"), "{}", stdout(&o));
    let mut b = vec!["train", "--epochs", "3", "--patience", "5", "--out", "m"];
    b.extend(common);
    assert_eq!(code(&motif(d.path(), &b)), 0);
    assert_eq!(
        fs::read(d.path().join("t/band_01.motifmodel")).unwrap(),
        fs::read(d.path().join("m/band_01.motifmodel")).unwrap()
    );
}

#[test]
fn training_is_reproducible() {
    let d = scratch();
    copy_dataset(d.path());
    for out in ["a", "b"] {
        let o = motif(
            d.path(),
            &["transfer", "--dataset", "d.motif", "--nband", "2", "--titer", "1", "--hidden", "8", "--bootstrap-epochs", "2", "--visit-epochs", "2", "--out", out],
        );
        assert_eq!(code(&o), 0);
    }
    for f in ["band_01.motifmodel", "band_02.motifmodel", "ensemble.manifest"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn perfect_copy_reports_zero_error() {
    let d = scratch();
    copy_dataset(d.path());
    let o = motif(d.path(), &["eval", "--perfect-copy", "--dataset", "d.motif", "--out", "ev"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = fs::read_to_string(d.path().join("ev/summary.txt")).unwrap();
    assert!(s.contains("mae_avg_full=0.000000e0") && s.contains("mae_avg_2srf=0.000000e0"), "{s}");
    let csv = fs::read_to_string(d.path().join("ev/mae_freq.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() == 0.0), "{csv}");
}

#[test]
fn eval_comparison_table() {
    let f = fixture();
    let d = scratch();
    let o = motif(
        d.path(),
        &[
            "eval", "--model", f.root.join("ens").to_str().unwrap(), "--baseline", f.root.join("mono").to_str().unwrap(),
            "--dataset", f.root.join("d.motif").to_str().unwrap(), "--out", "ev",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("improvement over baseline"));
    let table = fs::read_to_string(d.path().join("ev/comparison.txt")).unwrap();
    assert!(table.contains("MAE_avg_2SRF") && table.contains("reduction"));
    let svg = fs::read_to_string(d.path().join("ev/mae_freq.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn eval_accepts_single_checkpoint_file() {
    let f = fixture();
    let d = scratch();
    let o = motif(
        d.path(),
        &[
            "eval", "--model", f.root.join("mono/band_01.motifmodel").to_str().unwrap(),
            "--dataset", f.root.join("d.motif").to_str().unwrap(), "--out", "ev",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_actionable() {
    let d = scratch();
    copy_dataset(d.path());
    let o = motif(d.path(), &["eval", "--model", "nowhere", "--dataset", "d.motif"]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("nowhere") && e.contains("motif transfer"), "{e}");
}

fn design_cfg(dir: &Path, extra: &str) {
    let f = fixture();
    fs::write(
        dir.join("t.cfg"),
        format!(
            "ensemble={}\nturns=1:2\nz01=40,-50\nz02=150,80\nfc=45\nbw=10\nrho=1\nmax_evals=150\n{extra}",
            f.root.join("ens").display()
        ),
    )
    .unwrap();
}

#[test]
fn invdesign_writes_full_bundle() {
    let d = scratch();
    design_cfg(d.path(), "");
    let o = motif(d.path(), &["invdesign", "--config", "t.cfg", "--out", "des"]);
    assert!(code(&o) == 0 || code(&o) == 4, "{}", stderr(&o));
    for name in ["report.txt", "curves.csv", "design.s4p", "gamma_in.svg", "loss.svg", "run.config"] {
        assert!(d.path().join("des").join(name).exists(), "{name}");
    }
    let report = fs::read_to_string(d.path().join("des/report.txt")).unwrap();
    assert!(report.contains("oracle_cost=") && report.contains("cost_gap="));
}

#[test]
fn unreachable_target_exits_with_no_feasible_design() {
    let d = scratch();
    design_cfg(d.path(), "");
    let o = motif(
        d.path(),
        &["invdesign", "--config", "t.cfg", "--z01", "1,-300", "--z02", "1500,400", "--fc", "5", "--bw", "4", "--out", "des"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(fs::read_to_string(d.path().join("des/report.txt")).unwrap().starts_with("status=no-feasible-design"));
}

#[test]
fn malformed_impedance_literal() {
    let d = scratch();
    design_cfg(d.path(), "");
    let o = motif(d.path(), &["invdesign", "--config", "t.cfg", "--z01", "40-50j"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("\"re,im\""), "{}", stderr(&o));
}

#[test]
fn invdesign_rejects_other_template_and_off_grid_target() {
    let d = scratch();
    design_cfg(d.path(), "");
    let o = motif(d.path(), &["invdesign", "--config", "t.cfg", "--template", "11", "--turns", "1:1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("template mismatch"), "{}", stderr(&o));
    let o = motif(d.path(), &["invdesign", "--config", "t.cfg", "--fc", "140"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn touchstone_export_from_oracle_and_surrogate() {
    let f = fixture();
    let d = scratch();
    let g = ["--template", "mn", "--turns", "1:2", "--outer", "100", "--width", "6", "--spacing", "4", "--gap", "3"];
    let mut a = vec!["export", "touchstone", "--out", "o.s4p", "--c1", "40"];
    a.extend(g);
    let o = motif(d.path(), &a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = f.root.join("ens");
    let mut b = vec!["export", "touchstone", "--source", "surrogate", "--model", model.to_str().unwrap(), "--out", "s.s4p"];
    b.extend(g);
    let o = motif(d.path(), &b);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for p in ["o.s4p", "s.s4p"] {
        let t = motif_core::rfnet::touchstone_read(d.path().join(p)).unwrap();
        assert_eq!(t.tensor.grid().k, 200);
    }
}
