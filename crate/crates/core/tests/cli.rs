//! Drives the binary and the command layer on a small configuration.

use std::fs;
use std::path::Path;
use std::process::Command as Process;

use relfilter::data::read_run;
use relfilter::filter::ThresholdCalibration;

const SMALL: &str = r#"
[synthetic]
num_queries = 120
corpus_size = 2400
dim = 16

[tokens]
num_queries = 60
num_candidates = 120
topics = 12

[encoder]
epochs = 2

[adapter]
epochs = 3

[retrieval]
k = 20
"#;

fn bin(args: &[&str], dir: &Path) -> (bool, String, String) {
    let cfg = dir.join("run.toml");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    let out = Process::new(env!("CARGO_BIN_EXE_relfilter"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str], dir: &Path) -> String {
    let (success, stdout, stderr) = bin(args, dir);
    assert!(success, "{args:?} failed: {stderr}");
    stdout
}

fn full_run(dir: &Path, seed: &str) {
    for c in ["gen-synth", "train-encoder", "embed", "build-index"] {
        ok(&[c, "--seed", seed], dir);
    }
    for kind in ["linear", "sqrt", "quadratic", "power"] {
        ok(&["train-adapter", "--kind", kind, "--seed", seed], dir);
    }
    ok(&["calibrate", "--kind", "power", "--seed", seed], dir);
    ok(&["search", "--kind", "power", "--seed", seed], dir);
    ok(&["evaluate", "--seed", seed], dir);
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    full_run(dir.path(), "3");
    let out = dir.path().join("out");

    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    for m in ["raw", "max-norm", "linear", "sqrt", "quadratic", "power"] {
        assert!(report.lines().any(|l| l.starts_with(m)), "{m} missing from\n{report}");
        assert!(out.join(format!("histogram_{m}.tsv")).is_file());
    }
    let kv = fs::read_to_string(out.join("report.kv")).unwrap();
    assert!(kv.contains("power.pr_auc="));

    let cal = ThresholdCalibration::load(out.join("calibration_power.toml")).unwrap();
    let runs = read_run(std::io::BufReader::new(fs::File::open(out.join("run_power.txt")).unwrap())).unwrap();
    for entries in runs.values() {
        assert!(entries.len() <= 20);
        assert!(entries.iter().all(|e| e.score >= cal.threshold));
        assert!(entries.windows(2).all(|w| w[0].rank + 1 == w[1].rank));
    }
}

#[test]
fn calibrate_at_high_recall() {
    let dir = tempfile::tempdir().unwrap();
    for c in ["gen-synth", "build-index"] {
        ok(&[c], dir.path());
    }
    ok(&["train-adapter", "--kind", "sqrt"], dir.path());
    let stdout = ok(&["calibrate", "--kind", "sqrt", "--target-recall", "0.99"], dir.path());
    assert!(stdout.contains("target 0.99"), "{stdout}");
    let cal = ThresholdCalibration::load(dir.path().join("out/calibration_sqrt.toml")).unwrap();
    assert_eq!(cal.target_recall, 0.99);
    assert!(cal.achieved_recall >= 0.99);
}

#[test]
fn seed_changes_outputs_and_repeats_exactly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        ok(&["gen-synth", "--seed", seed], dir.path());
    }
    let qa = fs::read(a.path().join("out/queries.crem")).unwrap();
    let qb = fs::read(b.path().join("out/queries.crem")).unwrap();
    assert_ne!(qa, qb);
    ok(&["gen-synth", "--seed", "2"], a.path());
    assert_eq!(fs::read(a.path().join("out/queries.crem")).unwrap(), qb);
}

#[test]
fn failures_are_stage_labeled() {
    let dir = tempfile::tempdir().unwrap();
    let (success, _, stderr) = bin(&["search", "--kind", "power"], dir.path());
    assert!(!success);
    assert!(stderr.contains("search: missing input file"), "{stderr}");

    let (success, _, stderr) = bin(&["calibrate", "--target-recall", "1.5"], dir.path());
    assert!(!success);
    assert!(stderr.contains("config"), "{stderr}");

    fs::write(dir.path().join("run.toml"), "[adapter]\nkind = \"cubic\"\n").unwrap();
    let (success, _, stderr) = bin(&["gen-synth"], dir.path());
    assert!(!success);
    assert!(stderr.contains("config"), "{stderr}");
}

#[test]
fn evaluate_refuses_partial_adapters() {
    let dir = tempfile::tempdir().unwrap();
    for c in ["gen-synth", "build-index"] {
        ok(&[c], dir.path());
    }
    ok(&["train-adapter", "--kind", "power"], dir.path());
    let (success, _, stderr) = bin(&["evaluate"], dir.path());
    assert!(!success);
    assert!(stderr.contains("adapter_linear.crad"), "{stderr}");
    assert!(!dir.path().join("out/report.txt").exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    for c in ["gen-synth", "build-index"] {
        ok(&[c], dir.path());
    }
    let before = fs::read(dir.path().join("out/corpus.crem")).unwrap();
    let index = fs::read(dir.path().join("out/index.crix")).unwrap();
    ok(&["train-adapter"], dir.path());
    ok(&["calibrate"], dir.path());
    ok(&["search"], dir.path());
    assert_eq!(fs::read(dir.path().join("out/corpus.crem")).unwrap(), before);
    assert_eq!(fs::read(dir.path().join("out/index.crix")).unwrap(), index);
}
