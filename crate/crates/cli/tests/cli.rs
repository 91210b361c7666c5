use std::path::Path;
use std::process::{Command, Output};

fn esci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esci"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = esci(args);
    assert!(
        out.status.success(),
        "esci {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--queries",
        "60",
    ]);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "5");
    synth(&b, "5");
    for name in [
        "catalog.csv",
        "t2t3_train.csv",
        "probs.csv",
        "test_truth.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn missing_seed_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esci(&["synth", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_setting_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esci(&[
        "synth",
        "--out",
        tmp.path().to_str().unwrap(),
        "--seed",
        "1",
        "--set",
        "nonsense=3",
    ]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_then_evaluate_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "8");
    let data_s = data.to_str().unwrap();
    let run_s = run.to_str().unwrap();
    ok(&[
        "pipeline",
        "--data",
        data_s,
        "--seed",
        "8",
        "--out",
        run_s,
        "--set",
        "num_rounds=10",
        "--set",
        "max_depth=3",
    ]);
    let kv = std::fs::read_to_string(run.join("report.kv")).unwrap();
    let line = kv
        .lines()
        .find(|l| l.starts_with("T2.test.") && l.contains("\tall\t"))
        .unwrap();
    let reported: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();

    let truth = data.join("test_truth.csv");
    let preds = run.join("t2_labels.csv");
    let eval = ok(&[
        "evaluate",
        "--truth",
        truth.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--task",
        "T2",
        "--kv",
    ]);
    let line = eval.lines().find(|l| l.contains("\tall\t")).unwrap();
    let rescored: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();
    assert!(
        (reported - rescored).abs() < 1e-6,
        "{reported} vs {rescored}"
    );
}

#[test]
fn batch_sim_reports_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "9");
    let cache = tmp.path().join("tokens.bin");
    let args = [
        "batch-sim",
        "--data",
        data.to_str().unwrap(),
        "--batch-size",
        "8",
        "--cache",
        cache.to_str().unwrap(),
    ];
    let first = ok(&args);
    assert!(cache.exists());
    let second = ok(&args);
    assert_eq!(first, second);
    assert!(first.contains("outputs_identical"));
}
