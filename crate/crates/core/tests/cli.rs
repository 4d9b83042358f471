use std::path::Path;
use std::process::{Command, Output};

use dpfed::metrics::read_metrics;
use dpfed::task::load_frozen_features;

fn dpfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpfed"))
        .args(args)
        .output()
        .expect("spawn dpfed")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn run_writes_identical_metrics_twice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.cfg");
    std::fs::write(
        &cfg,
        "# private quadratic run\nn = 5\nrounds = 30\nsigma_g = 2\nclip_cg = 1\nquad_dim = 6\n",
    )
    .unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("m{k}.csv"));
        let r = dpfed(&["run", path_str(&cfg), "--set", &format!("output={}", path_str(&out))]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(stdout(&r).contains("resolved_sigma_g = 2"));
        files.push(std::fs::read(&out).unwrap());
        let meta = std::fs::read_to_string(out.with_extension("csv.meta")).unwrap();
        assert!(meta.contains("rounds = 30"), "{meta}");
    }
    assert_eq!(files[0], files[1]);
    let table = read_metrics(dir.path().join("m0.csv")).unwrap();
    let rounds: Vec<usize> = table.rows.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![10, 20, 30]);
    assert!(table.rows.iter().all(|r| r.elapsed == 0.0 && r.suboptimality_gap.is_some()));
}

#[test]
fn run_without_output_prints_csv() {
    let r = dpfed(&["run", "--set", "rounds=3", "--set", "eval_every=1", "--set", "n=2"]);
    assert!(r.status.success());
    let text = stdout(&r);
    assert!(text.contains("round,train_loss,test_accuracy,aggregate_grad_norm,suboptimality_gap,elapsed"));
    assert_eq!(text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 3);
}

#[test]
fn bad_configs_exit_nonzero_with_a_message() {
    let r = dpfed(&["run", "--set", "no_such_key=1"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no_such_key"));
    let r = dpfed(&["run", "--set", "sigma_g=1", "--set", "epsilon=1", "--set", "delta=1e-5"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn calibrate_reports_a_budget_meeting_sigma() {
    let r = dpfed(&["calibrate", "--epsilon", "5", "--delta", "1e-5", "--n", "20", "--rounds", "70"]);
    assert!(r.status.success());
    let text = stdout(&r);
    let sigma: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("sigma_g = "))
        .unwrap()
        .parse()
        .unwrap();
    let achieved: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("achieved_delta = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(sigma > 60.0 && sigma < 70.0, "{sigma}");
    assert!(achieved <= 1e-5);
}

#[test]
fn verify_exit_codes() {
    let ok = dpfed(&["verify", "--suite", "sherman-morrison"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("SHERMAN_MORRISON"));
    let unknown = dpfed(&["verify", "--suite", "nope"]);
    assert!(!unknown.status.success());
}

#[test]
fn generated_features_train_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("features.txt");
    let r = dpfed(&[
        "gen-task", "--out", path_str(&data), "--dim", "6", "--classes", "3", "--examples", "300",
    ]);
    assert!(r.status.success());
    let (examples, meta) = load_frozen_features(&data).unwrap();
    assert_eq!((examples.len(), meta.feature_dim, meta.num_classes), (300, 6, 3));
    assert_eq!(meta.class_counts, vec![100, 100, 100]);

    let out = dir.path().join("m.csv");
    let r = dpfed(&[
        "run",
        "--set",
        "task=features",
        "--set",
        &format!("features_path={}", path_str(&data)),
        "--set",
        "n=4",
        "--set",
        "rounds=20",
        "--set",
        "eta=0.5",
        "--set",
        &format!("output={}", path_str(&out)),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = read_metrics(&out).unwrap();
    let acc = table.last().unwrap().test_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(table.last().unwrap().suboptimality_gap.is_none());
}

#[test]
fn grid_reports_best_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    let r = dpfed(&[
        "grid",
        "--set",
        "n=3",
        "--set",
        "rounds=10",
        "--grid-eta",
        "0.1,0.5",
        "--grid-clip",
        "1,5",
        "--seeds",
        "2",
        "--sweep-output",
        path_str(&sweep),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = stdout(&r);
    assert!(text.contains("best_eta = "));
    assert!(text.contains("sigma_g = 0"));
    let rows = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(rows.lines().count(), 5);
}
