//! Black-box runs of the binary: exit codes, error reports, output files.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coxratio"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_fit_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    let o = run(&["simulate", "--preset", "example1", "--seeds", "2", "--seed", "9"], &sim);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["events_0000.csv", "events_0001.csv", "truth.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let truth = json(&sim.join("truth.json"));
    assert_eq!(truth["horizon"], 1000.0);

    let fit = d.path().join("fit");
    let input = sim.join("events_0000.csv");
    let o = run(&["fit", "--input", input.to_str().unwrap()], &fit);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let f = json(&fit.join("fit.json"));
    let theta = f["theta_hat"].as_array().map(|a| a[0].as_f64().unwrap()).unwrap_or_else(|| {
        f["theta_hat"]["values"][0].as_f64().unwrap()
    });
    assert!((theta - 1.5).abs() < 0.3, "{theta}");
    let m = json(&fit.join("manifest.json"));
    assert_eq!(m["command"], "fit");
    let inputs = m["inputs"].as_array().unwrap();
    assert!(inputs.iter().any(|i| i["path"].as_str().unwrap().ends_with("events_0000.csv")));
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    assert!(std::fs::read_to_string(fit.join("coefficients.csv")).unwrap().starts_with("coordinate,estimate,stderr"));
}

#[test]
fn same_seed_same_bytes() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    let args = ["simulate", "--preset", "synthlob", "--seed", "3", "--set", "events_per_session=2000"];
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    for f in ["lob_0000.csv", "truth.json", "calibration.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = d.path().join("c");
    assert!(run(&["simulate", "--preset", "synthlob", "--seed", "4", "--set", "events_per_session=2000"], &c).status.success());
    assert_ne!(std::fs::read(a.join("lob_0000.csv")).unwrap(), std::fs::read(c.join("lob_0000.csv")).unwrap());
}

#[test]
fn config_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let missing = d.path().join("nope.csv");
    let o = run(&["fit", "--input", missing.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(out.join("error.json").exists());

    let o = run(&["simulate", "--preset", "example1", "--set", "bogus=1"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--preset", "nonsense"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compute_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("empty.csv");
    std::fs::write(&input, "time,process,x\n").unwrap();
    std::fs::write(d.path().join("truth.json"), r#"{"horizon": 10.0, "n_processes": 2}"#).unwrap();
    let out = d.path().join("o");
    let o = run(&["fit", "--input", input.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    let err = json(&out.join("error.json"));
    assert_eq!(err["command"], "fit");
}

#[test]
fn penalize_rejects_nonpositive_lambda() {
    let d = tempfile::tempdir().unwrap();
    let sim = d.path().join("sim");
    assert!(run(&["simulate", "--preset", "synthlob", "--set", "events_per_session=2000", "--set", "n_sessions=1"], &sim).status.success());
    let lob = sim.join("lob_0000.csv");
    let o = run(&["penalize", "--input", lob.to_str().unwrap(), "--recipe", "imbalance", "--lambda", "0"], &d.path().join("p"));
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["penalize", "--input", lob.to_str().unwrap(), "--recipe", "imbalance", "--lambda", "0.01"], &d.path().join("q"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(d.path().join("q/penalty.json").exists());
}
