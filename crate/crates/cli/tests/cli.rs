use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ceils(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ceils"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_gen_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/synth.csv");
    let o = ceils(&["synth-gen", "-n", "50", "-s", "3", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("X1,X2,label"));
    assert_eq!(text.lines().count(), 51);

    let credit = tmp.path().join("credit.csv");
    assert_eq!(code(&ceils(&["synth-gen", "--kind", "credit", "-n", "20", "-o", s(&credit)])), 0);
    assert!(std::fs::read_to_string(&credit).unwrap().starts_with("age,gender,amount,duration,label"));
}

#[test]
fn experiment_then_metrics_then_explain() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = repo().join("configs/experiments/german.json");
    let o = ceils(&["experiment", "-c", s(&cfg), "-o", s(&run), "-w", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);

    let m = ceils(&["metrics", "-d", s(&run)]);
    assert_eq!(code(&m), 0, "{}", String::from_utf8_lossy(&m.stderr));
    assert_eq!(String::from_utf8(m.stdout).unwrap(), table);

    let data = repo().join("data/german_style.csv");
    let e = ceils(&["explain", "-m", s(&run), "-d", s(&data), "-r", "1"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let v: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    assert_eq!(v["baseline"]["method"], "baseline");
    assert_eq!(v["ceils"]["method"], "ceils");
    assert_eq!(v["ceils"]["factual"][0], 29.0);

    let bad_row = ceils(&["explain", "-m", s(&run), "-d", s(&data), "-r", "0"]);
    assert_eq!(code(&bad_row), 2);
}

#[test]
fn fit_saves_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/experiments/german.json");
    let o = ceils(&["fit", "-c", s(&cfg), "-o", s(tmp.path()), "-s", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["regressors"], 2);
    for f in ["scm.json", "classifier.json", "explainer.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ceils(&["experiment", "-c", "/nonexistent/cfg.json"])), 2);

    let malformed = tmp.path().join("m.json");
    std::fs::write(&malformed, "{ \"seed\": }").unwrap();
    let o = ceils(&["experiment", "-c", s(&malformed)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let cyclic = tmp.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{"nodes": [{"name": "X1"}, {"name": "X2"}], "edges": [["X1", "X2"], ["X2", "X1"]]}"#,
    )
    .unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"dag": {:?}, "eval_instances": 5, "output_dir": "out"}}"#, s(&cyclic)),
    )
    .unwrap();
    let o = ceils(&["experiment", "-c", s(&cfg)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));

    assert_eq!(code(&ceils(&["experiment"])), 2);
}

#[test]
fn diverging_training_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dataset": {{"source": "synthetic", "n": 200}},
                "dag": {:?},
                "classifier_training": {{"learning_rate": 1e30, "momentum": 0.0}},
                "eval_instances": 5, "output_dir": "out"}}"#,
            s(&repo().join("configs/dags/synthetic1.json"))
        ),
    )
    .unwrap();
    let o = ceils(&["experiment", "-c", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": false"));
}
