use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernel-mfg"))
        .args(args)
        .env_remove("KMFG_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p.display().to_string()
}

fn tiny_shift() -> Value {
    json!({
        "schema": "kernel-mfg/config-v1",
        "experiment": "sbp-shift",
        "params": {
            "dim": 2,
            "train": {
                "n_iters": 4, "batch": 16, "features": 32, "hidden": [8],
                "steps": 8, "eval_batch": 64, "eval_interval": 2
            }
        }
    })
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn invalid_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o").display().to_string();
    for bad in [json!({"unknown": 1}), json!({"schema": "other/v9"}), json!({"params": {"train": {"n_iters": "x"}}})] {
        let cfg = write_config(tmp.path(), "bad.json", &bad);
        let r = cli(&["sbp-shift", "--config", &cfg, "--out", &out]);
        assert_eq!(r.status.code(), Some(2), "{bad}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let wrong = write_config(tmp.path(), "wrong.json", &json!({"experiment": "bias-table"}));
    assert_eq!(cli(&["sbp-shift", "--config", &wrong, "--out", &out]).status.code(), Some(2));
    assert_eq!(cli(&["sbp-shift", "--dim", "7", "--out", &out]).status.code(), Some(2));
    assert_eq!(cli(&["report", &tmp.path().join("empty").display().to_string()]).status.code(), Some(2));
}

#[test]
fn rerun_from_written_config_reproduces_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "shift.json", &tiny_shift());
    let a = tmp.path().join("a");
    let r = cli(&["sbp-shift", "--config", &cfg, "--seeds", "3,4", "--out", &a.display().to_string()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["config.json", "results.csv", "summary.json", "runs/d=2/seed-3/train_log.csv", "runs/d=2/seed-4/network.json"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }

    let b = tmp.path().join("b");
    let resolved = a.join("config.json").display().to_string();
    let r = cli(&["sbp-shift", "--config", &resolved, "--out", &b.display().to_string()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read(&a.join("results.csv")), read(&b.join("results.csv")));
    assert_eq!(read(&a.join("config.json")), read(&b.join("config.json")));

    let sa: Value = serde_json::from_str(&read(&a.join("summary.json"))).unwrap();
    let sb: Value = serde_json::from_str(&read(&b.join("summary.json"))).unwrap();
    assert_eq!(sa["config_hash"], sb["config_hash"]);
    assert_eq!(sa["seeds"], json!([3, 4]));
    assert_eq!(sa["schema"], "kernel-mfg/summary-v1");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "shift.json", &tiny_shift());
    let a = tmp.path().join("a");
    let r = cli(&["sbp-shift", "--config", &cfg, "--epochs", "2", "--seeds", "1", "--trials", "5", "--out", &a.display().to_string()]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("--trials does not apply"));
    let resolved: Value = serde_json::from_str(&read(&a.join("config.json"))).unwrap();
    assert_eq!(resolved["params"]["train"]["n_iters"], 2);
    assert_eq!(resolved["params"]["train"]["batch"], 16);
    assert_eq!(resolved["seeds"], json!([1]));
    let log = read(&a.join("runs/d=2/seed-1/train_log.csv"));
    assert!(log.starts_with("iter,energy,interaction,penalty,objective,eval_mmd2,sup_norm,wall_ms"));
}

#[test]
fn report_groups_runs_and_flags_single_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), "shift.json", &tiny_shift());
    let shift = root.join("shift").display().to_string();
    assert!(cli(&["sbp-shift", "--config", &cfg, "--seeds", "0,1", "--out", &shift]).status.success());
    let bias = root.join("bias").display().to_string();
    assert!(cli(&["bias-table", "--trials", "8", "--out", &bias]).status.success());

    let r = cli(&["report", &root.display().to_string()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: Value = serde_json::from_str(&read(&root.join("report.json"))).unwrap();
    assert_eq!(report["schema"], "kernel-mfg/report-v1");
    let rows = report["rows"].as_array().unwrap();

    let shift_rows: Vec<&Value> = rows.iter().filter(|r| r["experiment"] == "sbp-shift").collect();
    assert!(!shift_rows.is_empty());
    for r in &shift_rows {
        assert_eq!(r["group"], "variant=d=2");
        assert_eq!(r["count"], 2);
        assert_eq!(r["flag"], "");
    }
    assert!(shift_rows.iter().all(|r| r["metric"] != "seed"));

    let bias_rows: Vec<&Value> = rows.iter().filter(|r| r["experiment"] == "bias-table").collect();
    let groups: std::collections::BTreeSet<&str> = bias_rows.iter().map(|r| r["group"].as_str().unwrap()).collect();
    assert_eq!(groups.into_iter().collect::<Vec<_>>(), ["estimator=kernel-u", "estimator=rf-u", "estimator=rff-v"]);
    for r in &bias_rows {
        assert_eq!(r["count"], 1);
        assert_eq!(r["flag"], "single-seed");
        assert_eq!(r["std"], 0.0);
    }
    assert!(read(&root.join("report.csv")).starts_with("experiment,group,metric,mean,std,sem,count,flag"));
}

#[test]
fn estimator_results_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a").display().to_string();
    let b = tmp.path().join("b").display().to_string();
    assert!(cli(&["bias-table", "--trials", "6", "--seeds", "5", "--out", &a]).status.success());
    assert!(cli(&["bias-table", "--trials", "6", "--seeds", "5", "--out", &b]).status.success());
    let csv = read(&Path::new(&a).join("results.csv"));
    assert_eq!(csv, read(&Path::new(&b).join("results.csv")));
    assert_eq!(csv.lines().count(), 4);
}
