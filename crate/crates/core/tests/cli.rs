use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poisonlab"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

const ERM_CONFIG: &str = r#"{
  "mode": "erm",
  "loss": "squared",
  "covariance": {"isotropic": {}},
  "p": 20,
  "n": 60,
  "phi": 0.2,
  "lambda": "synthetic",
  "alpha_grid": [0.0, 1.0, 3.0],
  "reps": 4,
  "base_seed": 11,
  "output": "out"
}"#;

#[test]
fn run_is_deterministic_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.json"), ERM_CONFIG).unwrap();
    let a = run_in(d.path(), &["run", "--config", "c.json", "--threads", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = std::fs::read(d.path().join("out/results.csv")).unwrap();
    let b = run_in(d.path(), &["run", "--config", "c.json", "--threads", "3", "--out", "out2"]);
    assert!(b.status.success());
    assert_eq!(first, std::fs::read(d.path().join("out2/results.csv")).unwrap());
    let c = run_in(d.path(), &["run", "--config", "c.json", "--seed", "12", "--out", "out3"]);
    assert!(c.status.success());
    assert_ne!(first, std::fs::read(d.path().join("out3/results.csv")).unwrap());

    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("alpha,phi,kappa,rep,h_mu_theory"));
    assert_eq!(lines.count(), 3 * (4 + 2));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out3/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["base_seed"], 12);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn validate_reports_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("ok.json"), ERM_CONFIG).unwrap();
    assert!(run_in(d.path(), &["validate", "--config", "ok.json"]).status.success());

    std::fs::write(d.path().join("unknown.json"), ERM_CONFIG.replace("\"p\": 20", "\"p\": 20, \"q\": 1")).unwrap();
    let out = run_in(d.path(), &["validate", "--config", "unknown.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    std::fs::write(d.path().join("reps.json"), ERM_CONFIG.replace("\"reps\": 4", "\"reps\": 0")).unwrap();
    assert_eq!(run_in(d.path(), &["run", "--config", "reps.json"]).status.code(), Some(2));
    assert!(!d.path().join("out").exists());

    let dense = r#"{"mode":"theory","loss":"logistic","covariance":{"dense":{"mean":"missing.csv","cov":"C.csv"}},"n":10,"lambda":0.5}"#;
    std::fs::write(d.path().join("dense.json"), dense).unwrap();
    assert_eq!(run_in(d.path(), &["validate", "--config", "dense.json"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("blocker"), "file, not a directory").unwrap();
    std::fs::write(d.path().join("c.json"), ERM_CONFIG.replace("\"out\"", "\"blocker/sub\"")).unwrap();
    assert_eq!(run_in(d.path(), &["run", "--config", "c.json"]).status.code(), Some(3));
}

#[test]
fn decompose_prints_table() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("m.csv"), "1,0,0\n").unwrap();
    std::fs::write(d.path().join("C.csv"), "1,0.2,0\n0.2,1,0\n0,0,0.5\n").unwrap();
    std::fs::write(d.path().join("v.csv"), "0,0,2\n").unwrap();
    let out = run_in(
        d.path(),
        &["decompose", "--mean", "m.csv", "--cov", "C.csv", "--trigger", "v.csv", "--lambda", "0.5", "--phi", "0.1", "--n", "6"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for label in poisonlab::metrics::DECOMPOSITION_LABELS {
        assert!(text.contains(label), "missing row {label}");
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("rescaled from norm 2"));

    std::fs::write(d.path().join("bad.csv"), "1,0.3,0\n0.2,1,0\n0,0,0.5\n").unwrap();
    let out = run_in(
        d.path(),
        &["decompose", "--mean", "m.csv", "--cov", "bad.csv", "--lambda", "0.5", "--phi", "0.1", "--n", "6"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eigen_sweep_writes_one_file_per_variance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"mode":"eigen_sweep","loss":"squared","covariance":{"eigen_pair":{"s_mu_sq":2.0,"s_v_sq":1.0}},
      "p":20,"n":100,"phi":0.2,"lambda":0.5,"alpha_grid":[1.0,4.0],"s_v_sq_grid":[0.2,1.8],"reps":2}"#;
    std::fs::write(d.path().join("c.json"), cfg).unwrap();
    let out = run_in(d.path(), &["run", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["out/results_sv2_00.csv", "out/results_sv2_01.csv", "out/manifest.json"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
