use std::path::Path;
use std::process::{Command, Output};

fn samq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = samq(dir, args);
    assert!(
        out.status.success(),
        "samq {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--grid", "8", "--n", "4000", "--seed", "3", "--out", "d.csv", "--mdp-out", "mdp.json"]);
    assert!(d.join("d.meta.json").exists());
    ok(d, &["estimate-q", "--data", "d.csv", "--gamma", "0.95", "--degree", "3", "--out", "q.csv"]);
    ok(d, &["aggregate", "--q", "q.csv", "--n-s", "4", "--out", "a.json"]);
    ok(d, &["aggregate", "--q", "q.csv", "--n-s", "3", "--method", "adhoc", "--out", "adhoc.json"]);
    ok(d, &[
        "estimate", "--data", "d.csv", "--aggregation", "a.json", "--gamma", "0.95", "--theta-init", "0.1,1.0",
        "--bounds", "0:5,0:10", "--out", "report.json",
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["theta_hat"]["values"].as_array().unwrap().len(), 2);

    let table = ok(d, &[
        "diagnose", "--data", "d.csv", "--aggregation", "a.json", "--report", "report.json", "--q", "q.csv", "--mdp",
        "mdp.json", "--theta-star", "0.3,2.0", "--out", "bounds.json",
    ]);
    assert!(table.contains("theorem1"));
    let bounds: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("bounds.json")).unwrap()).unwrap();
    assert!(bounds["eps_q"].as_f64().unwrap() >= 0.0);

    ok(d, &["estimate", "--data", "d.csv", "--mdp", "mdp.json", "--gamma", "0.95", "--theta-init", "0.1,1.0", "--out", "full.json"]);
}

#[test]
fn hard_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--grid", "6", "--n", "500", "--out", "d.csv"]);
    let out = samq(d, &["estimate-q", "--data", "d.csv", "--gamma", "0.5", "--out", "q.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("discount"));
    let out = samq(d, &["estimate", "--data", "missing.csv", "--gamma", "0.95", "--theta-init", "0,1", "--out", "r.json"]);
    assert!(!out.status.success());
}

#[test]
fn benchmark_and_demo_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = serde_json::json!({
        "env": { "mileage_grid_size": 15 },
        "n": 2000,
        "n_s_list": [3, 5],
        "methods": ["SAmQ", "NF-MLE-SA"],
        "replications": 2
    });
    std::fs::write(d.join("exp.json"), cfg.to_string()).unwrap();
    let stdout = Command::new(env!("CARGO_BIN_EXE_samq"))
        .current_dir(d)
        .env("SAMQ_WORKERS", "2")
        .args(["benchmark", "--config", "exp.json", "--out", "results"])
        .output()
        .unwrap();
    assert!(stdout.status.success(), "{}", String::from_utf8_lossy(&stdout.stderr));
    let csv = std::fs::read_to_string(d.join("results/table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let demo = serde_json::json!({ "env": { "mileage_grid_size": 6, "dummy_dims": 1, "dummy_levels": 3 }, "n": 5000, "n_s": 4 });
    std::fs::write(d.join("demo.json"), demo.to_string()).unwrap();
    let text = ok(d, &["dummy-demo", "--config", "demo.json", "--out", "demo.csv"]);
    assert!(text.contains("column purity"));
    assert_eq!(std::fs::read_to_string(d.join("demo.csv")).unwrap().lines().count(), 1 + 18);
}
