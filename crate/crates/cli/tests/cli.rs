//! Command-line contract: exit codes, artifact handling and output formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_prefinfer");

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PREFINFER_OUT")
        .output()
        .expect("binary runs")
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

/// Writes a config with a short training run so the pipeline finishes quickly.
fn quick_config(out: &Path) {
    let init = run(out, &["config", "init"]);
    assert_eq!(code(&init), 0, "{}", stderr(&init));
    let path = out.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    cfg["agent"]["episodes"] = 1500.into();
    cfg["dwpi"]["epochs"] = 200.into();
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn config_init_writes_published_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["config", "init"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["agent"]["episodes"], 20000);
    assert_eq!(cfg["agent"]["learning_rate"], 0.001);
    assert_eq!(cfg["agent"]["replay_capacity"], 1000);
    assert_eq!(cfg["agent"]["batch_size"], 64);
    assert_eq!(cfg["dwpi"]["epochs"], 1500);
    assert_eq!(cfg["dwpi"]["learning_rate"], 0.01);
    assert_eq!(cfg["dwpi"]["batch_size"], 32);
    assert_eq!(cfg["grid_step"], 0.01);

    let again = run(dir.path(), &["config", "init"]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    assert_eq!(code(&run(dir.path(), &["config", "init", "--force"])), 0);
}

#[test]
fn stage_ordering_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train-dwpi"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert_eq!(err.lines().filter(|l| l.starts_with("error:")).count(), 1);
    assert!(err.contains("train-agent"), "{err}");
    assert_eq!(code(&run(dir.path(), &["train-agent"])), 3);
    assert_eq!(code(&run(dir.path(), &["validate"])), 3);
    assert_eq!(code(&run(dir.path(), &["infer", "--schedule", "2,3"])), 3);
}

#[test]
fn usage_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["report", "--format", "yaml"])), 1);
    assert_eq!(code(&run(dir.path(), &["infer"])), 1);
    assert_eq!(code(&run(dir.path(), &["run-all", "--repeat", "0"])), 1);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"seed\": 1}").unwrap();
    assert_eq!(code(&run(dir.path(), &["data", "prepare", "--config", bad.to_str().unwrap()])), 2);
    quick_config(dir.path());
    let path = dir.path().join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    cfg["agent"]["learning_rate"] = (-1.0).into();
    fs::write(&path, cfg.to_string()).unwrap();
    assert_eq!(code(&run(dir.path(), &["data", "prepare"])), 2);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["data", "prepare"])
        .env("PREFINFER_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("data/train_window.json").exists());
    assert!(dir.path().join("data/eval_window.json").exists());
}

#[test]
fn csv_data_source() {
    let dir = tempfile::tempdir().unwrap();
    let hours = 9 * 24;
    let write = |name: &str, f: &dyn Fn(usize) -> f64| {
        let mut s = String::from("time,reading\n");
        for h in 0..hours {
            // two half-hour readings per hour
            s.push_str(&format!("{},{}\n{},{}\n", h * 3600, f(h), h * 3600 + 1800, f(h)));
        }
        fs::write(dir.path().join(name), s).unwrap();
    };
    write("price.csv", &|h| 0.02 + 0.001 * (h % 24) as f64);
    write("solar.csv", &|h| if (8..17).contains(&(h % 24)) { 1.5 } else { 0.0 });
    write("load.csv", &|_| 0.4);
    let cfg = serde_json::json!({
        "kind": "csv",
        "price": dir.path().join("price.csv"),
        "renewable": dir.path().join("solar.csv"),
        "background": dir.path().join("load.csv"),
        "columns": {"timestamp": "time", "value": "reading"},
        "train_day": 0,
        "eval_start_day": 1,
    });
    quick_config(dir.path());
    let path = dir.path().join("config.json");
    let mut full: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    full["data"] = cfg;
    fs::write(&path, full.to_string()).unwrap();
    let o = run(dir.path(), &["data", "prepare"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/eval_window.json")).unwrap()).unwrap();
    assert_eq!(eval["days"], 7);
    assert_eq!(eval["start_hour"], 24);
    assert_eq!(eval["price"][1], 0.021);
}

#[test]
fn short_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    quick_config(out);
    for stage in [&["data", "prepare"][..], &["train-agent"], &["gen-demos"]] {
        let o = run(out, stage);
        assert_eq!(code(&o), 0, "{stage:?}: {}", stderr(&o));
    }
    let demos_before = fs::read(out.join("demos/demos.csv")).unwrap();
    let o = run(out, &["train-dwpi"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("demos/demos.csv")).unwrap(), demos_before);
    assert_eq!(demos_before.iter().filter(|&&b| b == b'\n').count(), 102);

    let o = run(out, &["infer", "--schedule", "2,3", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pair: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let (a, b) = (pair["w_cost"].as_f64().unwrap(), pair["w_comf"].as_f64().unwrap());
    assert!(a > 0.0 && b > 0.0 && (a + b - 1.0).abs() < 1e-9);
    let o = run(out, &["infer", "--weights", "0.3,0.7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).trim().starts_with('['));
    assert_eq!(code(&run(out, &["infer", "--weights", "0.3,0.6"])), 1);
    assert_eq!(code(&run(out, &["infer", "--schedule", "1,2,3"])), 1);

    let o = run(out, &["validate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("| always_max_comfort |"));
    let o = run(out, &["report", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["validation"]["rows"].as_array().unwrap().len(), 3);
    assert!(report["comparison"].is_null());

    // rerunning a stage with --force reproduces its artifact exactly
    let model = fs::read(out.join("dwpi/dwpi.model.json")).unwrap();
    assert_eq!(code(&run(out, &["train-dwpi"])), 1);
    assert_eq!(code(&run(out, &["train-dwpi", "--force"])), 0);
    assert_eq!(fs::read(out.join("dwpi/dwpi.model.json")).unwrap(), model);
}
