use std::path::{Path, PathBuf};

use ceils::data::generate_synthetic;
use ceils::experiment::{read_results, recompute_metrics, run_experiment, DatasetSource, ExperimentConfig, ThresholdPolicy};
use ceils::model::fit_classifier;
use ceils::model::Activation;
use ceils::{Architecture, Error, FeatureKind, Method, TrainConfig};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn small(out: &Path, workers: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic { n: 2000 },
        dag: repo().join("configs/dags/synthetic2.json"),
        regressor: Architecture::Linear,
        threshold: ThresholdPolicy::MedianScore,
        eval_instances: 60,
        seed: 9,
        output_dir: out.to_path_buf(),
        workers,
        ..ExperimentConfig::default()
    }
}

#[test]
fn synthetic_classifier_accuracy() {
    let d = generate_synthetic(10_000, 0).unwrap();
    let clf = fit_classifier(
        d.columns.clone(),
        &[FeatureKind::Continuous; 2],
        &d.features,
        &d.labels,
        Architecture::mlp(&[16, 16], Activation::Relu),
        &TrainConfig::default(),
    )
    .unwrap();
    assert!(clf.training_accuracy() >= 0.90, "{}", clf.training_accuracy());
}

#[test]
fn outputs_are_complete_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run_experiment(&small(&dir, 1)).unwrap();

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["evaluated_instances"], 60);

    let records = read_results(&dir.join("results.jsonl")).unwrap();
    assert_eq!(records.len(), 120);
    assert!(records.windows(2).all(|w| w[0].instance <= w[1].instance));

    for (j, name) in ["X1", "X2"].iter().enumerate() {
        for (method, results) in [(Method::Baseline, &out.baseline), (Method::Ceils, &out.ceils)] {
            let text = std::fs::read_to_string(
                dir.join("histograms").join(format!("{name}_{}.csv", method.as_str())),
            )
            .unwrap();
            let rows: Vec<&str> = text.lines().skip(1).collect();
            assert_eq!(rows.len(), 30);
            let total: usize = rows
                .iter()
                .map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap())
                .sum();
            assert_eq!(total, results.iter().filter(|r| r.valid).count(), "{name} {j}");
        }
    }

    let csv_before = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let report = recompute_metrics(&dir).unwrap();
    assert_eq!(report, out.report);
    assert_eq!(std::fs::read_to_string(dir.join("metrics.csv")).unwrap(), csv_before);
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&small(&tmp.path().join("one"), 1)).unwrap();
    run_experiment(&small(&tmp.path().join("four"), 4)).unwrap();
    for f in ["metrics.csv", "results.jsonl"] {
        assert_eq!(
            std::fs::read(tmp.path().join("one").join(f)).unwrap(),
            std::fs::read(tmp.path().join("four").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn failures_leave_an_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "X1,X2,label\n1,2,1\n1,oops,0\n").unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Csv {
            path: csv,
            label: "label".into(),
        },
        ..small(&tmp.path().join("run"), 1)
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.is_validation());
    assert!(matches!(&err, Error::Stage { stage: "load", source } if matches!(**source, Error::UnparseableValue { row: 2, .. })));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["complete"], false);
    assert_eq!(manifest["stage"], "load");
    assert!(manifest["error"].as_str().unwrap().contains("oops"));
}

#[test]
fn shipped_configs_load_and_validate() {
    for name in ["synthetic1", "synthetic2", "german"] {
        let cfg = ExperimentConfig::load(&repo().join(format!("configs/experiments/{name}.json"))).unwrap();
        cfg.validate().unwrap();
    }
    let german = ceils::data::load_dag_config(&repo().join("configs/dags/german.json")).unwrap();
    assert_eq!((german.graph.len(), german.graph.edge_count()), (4, 3));
    assert_eq!(german.graph.parents("amount").unwrap(), ["age", "gender"]);
    let s2 = ceils::data::load_dag_config(&repo().join("configs/dags/synthetic2.json")).unwrap();
    assert_eq!(s2.spec.get("X2").unwrap().class, ceils::Actionability::NonActionable);
}
