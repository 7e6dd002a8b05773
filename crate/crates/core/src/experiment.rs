//! End-to-end runs: data, model fitting, counterfactual generation for both
//! methods, evaluation and the output files.
//!
//! An output directory holds
//!
//! - `metrics.csv` and `metrics.json`: the [`MetricsReport`];
//! - `results.jsonl`: one [`ResultRecord`] per line, baseline then CEILS for
//!   each evaluated instance in index order;
//! - `histograms/<feature>_<method>.csv`: action distributions of the valid
//!   results, rescaled to a maximum magnitude of 1;
//! - `scm.json`, `classifier.json`, `explainer.json`: everything needed to
//!   explain new rows or recompute the metrics;
//! - `manifest.json`: the resolved config, seeds and a completion flag.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_csv, load_dag_config, DagConfig, DatasetBundle};
use crate::error::{Error, Result};
use crate::feasibility::FeasibilitySpec;
use crate::metrics::{median, InstanceMetrics, MetricContext, MetricsReport};
use crate::model::{fit_classifier, Activation, Architecture, ClassifierModel, TrainConfig};
use crate::scm::{fit_scm, StructuralModel};
use crate::search::{
    baseline_generate, ceils_generate, CounterfactualResult, Method, SearchConfig, SearchDomain,
};

pub const HISTOGRAM_BINS: usize = 30;
const VERIFY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { n: usize },
    Csv { path: PathBuf, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Median classifier score over the training split.
    MedianScore,
}

/// A full run. Relative paths are resolved against the config file's
/// directory by [`ExperimentConfig::load`].
///
/// `seed` is the only seed that matters: the data, split, instance sample,
/// model and search seeds are all derived from it (see [`Seeds`]) and any
/// seed set inside the nested configs is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub dag: PathBuf,
    pub regressor: Architecture,
    pub classifier: Architecture,
    pub regressor_training: TrainConfig,
    pub classifier_training: TrainConfig,
    pub search: SearchConfig,
    pub threshold: ThresholdPolicy,
    pub eval_instances: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetSource::Synthetic { n: 10_000 },
            dag: PathBuf::new(),
            regressor: Architecture::mlp(&[16, 16], Activation::Tanh),
            classifier: Architecture::mlp(&[16, 16], Activation::Relu),
            regressor_training: TrainConfig::default(),
            classifier_training: TrainConfig::default(),
            search: SearchConfig::default(),
            threshold: ThresholdPolicy::Fixed(0.5),
            eval_instances: 100,
            train_fraction: 0.8,
            seed: 0,
            output_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Seeds of every random stage, derived from the config seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub regressors: u64,
    pub classifier: u64,
    pub instances: u64,
    pub search: u64,
}

impl Seeds {
    pub fn from_root(seed: u64) -> Self {
        let at = |k: u64| seed.wrapping_mul(6).wrapping_add(k);
        Seeds {
            data: at(0),
            split: at(1),
            regressors: at(2),
            classifier: at(3),
            instances: at(4),
            search: at(5),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dag = base.join(&cfg.dag);
        if let DatasetSource::Csv { path, .. } = &mut cfg.dataset {
            *path = base.join(&*path);
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dag.is_file() {
            return Err(Error::Config(format!("DAG config {} not found", self.dag.display())));
        }
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                return Err(Error::Config(format!("dataset {} not found", path.display())));
            }
        }
        if let DatasetSource::Synthetic { n } = self.dataset {
            if n < 2 {
                return Err(Error::Config(format!("synthetic size {n} below 2")));
            }
        }
        if self.eval_instances == 0 || self.workers == 0 {
            return Err(Error::Config("eval_instances and workers must be positive".into()));
        }
        if let ThresholdPolicy::Fixed(t) = self.threshold {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("threshold {t} outside [0, 1)")));
            }
        }
        self.regressor_training.validate()?;
        self.classifier_training.validate()?;
        self.search.validate()
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_root(self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExplainerFile {
    threshold: f64,
    spec: FeasibilitySpec,
    feature_domain: SearchDomain,
    latent_domain: SearchDomain,
    search: SearchConfig,
    context: MetricContext,
}

/// Fitted models plus the training statistics the searches and metrics use.
#[derive(Debug, Clone)]
pub struct Explainer {
    pub scm: StructuralModel,
    pub classifier: ClassifierModel,
    pub spec: FeasibilitySpec,
    pub threshold: f64,
    pub feature_domain: SearchDomain,
    pub latent_domain: SearchDomain,
    pub search: SearchConfig,
    pub context: MetricContext,
}

impl Explainer {
    /// Fits both models on the training split of `data`, whose columns must
    /// already follow the graph's node order.
    pub fn fit(data: &DatasetBundle, dag: &DagConfig, cfg: &ExperimentConfig) -> Result<Self> {
        let seeds = cfg.seeds();
        let train = data.train_features();
        let kinds = dag.kinds();
        let scm = fit_scm(
            &train,
            &data.columns,
            &dag.graph,
            &cfg.regressor,
            &TrainConfig {
                seed: seeds.regressors,
                ..cfg.regressor_training.clone()
            },
        )
        .map_err(Error::stage("fit_scm"))?;
        let classifier = fit_classifier(
            data.columns.clone(),
            &kinds,
            &train,
            &data.train_labels(),
            cfg.classifier.clone(),
            &TrainConfig {
                seed: seeds.classifier,
                ..cfg.classifier_training.clone()
            },
        )
        .map_err(Error::stage("fit_classifier"))?;
        log::info!("classifier training accuracy {:.4}", classifier.training_accuracy());

        let threshold = match cfg.threshold {
            ThresholdPolicy::Fixed(t) => t,
            ThresholdPolicy::MedianScore => {
                let scores = train
                    .iter_rows()
                    .map(|r| classifier.score(r))
                    .collect::<Result<Vec<_>>>()?;
                median(&scores)?
            }
        };
        let latents = scm.abduct_all(&train)?;
        let names = dag.graph.node_names();
        Ok(Explainer {
            feature_domain: SearchDomain::from_samples(&train, cfg.search.bounded)?,
            latent_domain: SearchDomain::from_samples(&latents, cfg.search.bounded)?,
            context: MetricContext::fit(&train, &latents, &kinds, &names, dag.spec.clone())?,
            search: SearchConfig {
                seed: seeds.search,
                ..cfg.search.clone()
            },
            spec: dag.spec.clone(),
            threshold,
            scm,
            classifier,
        })
    }

    pub fn baseline(&self, x: &[f64]) -> Result<CounterfactualResult> {
        baseline_generate(
            &self.scm,
            &self.classifier,
            self.threshold,
            x,
            &self.spec,
            &self.feature_domain,
            &self.search,
        )
    }

    pub fn ceils(&self, x: &[f64]) -> Result<CounterfactualResult> {
        ceils_generate(
            &self.scm,
            &self.classifier,
            self.threshold,
            x,
            &self.spec,
            &self.latent_domain,
            &self.search,
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("scm.json"), &self.scm)?;
        write_json(&dir.join("classifier.json"), &self.classifier)?;
        write_json(
            &dir.join("explainer.json"),
            &ExplainerFile {
                threshold: self.threshold,
                spec: self.spec.clone(),
                feature_domain: self.feature_domain.clone(),
                latent_domain: self.latent_domain.clone(),
                search: self.search.clone(),
                context: self.context.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let scm: StructuralModel = read_json(&dir.join("scm.json"))?;
        let classifier: ClassifierModel = read_json(&dir.join("classifier.json"))?;
        let f: ExplainerFile = read_json(&dir.join("explainer.json"))?;
        f.spec.check_graph(scm.graph())?;
        Ok(Explainer {
            scm,
            classifier,
            spec: f.spec,
            threshold: f.threshold,
            feature_domain: f.feature_domain,
            latent_domain: f.latent_domain,
            search: f.search,
            context: f.context,
        })
    }
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Row index in the dataset.
    pub instance: usize,
    pub result: CounterfactualResult,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub explainer: Explainer,
    pub instances: Vec<usize>,
    pub baseline: Vec<CounterfactualResult>,
    pub ceils: Vec<CounterfactualResult>,
    pub baseline_metrics: Vec<InstanceMetrics>,
    pub ceils_metrics: Vec<InstanceMetrics>,
    pub report: MetricsReport,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    complete: bool,
    stage: &'a str,
    error: Option<String>,
    crate_version: &'a str,
    seeds: Seeds,
    config: &'a ExperimentConfig,
    dataset: Option<String>,
    classifier_training_accuracy: Option<f64>,
    threshold: Option<f64>,
    evaluated_instances: Option<usize>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Loads the DAG config and dataset of `cfg`, aligned to the graph and split.
pub fn load_inputs(cfg: &ExperimentConfig) -> Result<(DagConfig, DatasetBundle)> {
    let seeds = cfg.seeds();
    let dag = load_dag_config(&cfg.dag)?;
    let raw = match &cfg.dataset {
        DatasetSource::Synthetic { n } => generate_synthetic(*n, seeds.data)?,
        DatasetSource::Csv { path, label } => load_csv(path, &dag.graph, label)?,
    };
    let mut data = raw.aligned_to(&dag.graph)?;
    data.split(cfg.train_fraction, seeds.split)?;
    Ok((dag, data))
}

/// `k` evaluation rows drawn without replacement from the held-out split,
/// in ascending order.
pub fn sample_instances(data: &DatasetBundle, k: usize, seed: u64) -> Vec<usize> {
    let mut pool = data.eval.clone();
    if k > pool.len() {
        log::warn!(
            "{k} evaluation instances requested, only {} held out",
            pool.len()
        );
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

/// Runs both generators on every row of `rows` using `workers` threads.
/// Results come back in input order regardless of scheduling.
pub fn generate_all(
    explainer: &Explainer,
    rows: &[&[f64]],
    workers: usize,
) -> Result<Vec<(CounterfactualResult, CounterfactualResult)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        rows.par_iter()
            .map(|x| Ok((explainer.baseline(x)?, explainer.ceils(x)?)))
            .collect()
    })
}

/// Per-instance metrics and the aggregate report for paired results.
pub fn evaluate(
    explainer: &Explainer,
    baseline: &[CounterfactualResult],
    ceils: &[CounterfactualResult],
) -> Result<(Vec<InstanceMetrics>, Vec<InstanceMetrics>, MetricsReport)> {
    let ctx = &explainer.context;
    let bm = baseline
        .iter()
        .map(|r| ctx.evaluate(&explainer.scm, r))
        .collect::<Result<Vec<_>>>()?;
    let cm = ceils
        .iter()
        .map(|r| ctx.evaluate(&explainer.scm, r))
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<Option<f64>> = baseline
        .iter()
        .zip(ceils)
        .map(|(b, c)| Some(ctx.direction_gap(b, c)))
        .collect();
    let valid = |rs: &[CounterfactualResult]| rs.iter().map(|r| r.valid).collect::<Vec<_>>();
    let report = MetricsReport::build(&bm, &valid(baseline), &cm, &valid(ceils), &gaps)?;
    Ok((bm, cm, report))
}

/// `(bin_left, bin_right, count)` rows over `[-1, 1]` after dividing the
/// values by their largest magnitude. Counts sum to `values.len()`.
pub fn action_histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let r = if peak > 0.0 { v / peak } else { 0.0 };
        let b = (((r + 1.0) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-1.0 + i as f64 * width, -1.0 + (i + 1) as f64 * width, c))
        .collect()
}

fn write_outputs(dir: &Path, out: &ExperimentOutcome) -> Result<()> {
    fs::write(dir.join("metrics.csv"), out.report.to_csv())
        .map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
    write_json(&dir.join("metrics.json"), &out.report)?;

    let mut lines = String::new();
    for ((&instance, b), c) in out.instances.iter().zip(&out.baseline).zip(&out.ceils) {
        for r in [b, c] {
            r.verify(&out.explainer.scm, &out.explainer.classifier, out.explainer.threshold, VERIFY_TOLERANCE)?;
            lines.push_str(&serde_json::to_string(&ResultRecord {
                instance,
                result: r.clone(),
            })?);
            lines.push('\n');
        }
    }
    fs::write(dir.join("results.jsonl"), lines).map_err(|e| Error::io(dir.join("results.jsonl"), e))?;

    let hist_dir = dir.join("histograms");
    fs::create_dir_all(&hist_dir).map_err(|e| Error::io(&hist_dir, e))?;
    for (j, name) in out.explainer.scm.graph().node_names().into_iter().enumerate() {
        for (method, results) in [(Method::Baseline, &out.baseline), (Method::Ceils, &out.ceils)] {
            let actions: Vec<f64> = results
                .iter()
                .filter(|r| r.valid)
                .map(|r| r.action.0[j])
                .collect();
            let mut csv = String::from("bin_left,bin_right,count\n");
            for (l, r, c) in action_histogram(&actions, HISTOGRAM_BINS) {
                csv.push_str(&format!("{l:.6},{r:.6},{c}\n"));
            }
            let path = hist_dir.join(format!("{name}_{}.csv", method.as_str()));
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Runs `cfg` end to end and writes every output file into
/// `cfg.output_dir`. On failure the manifest is still written, flagged
/// incomplete, with the failing stage and error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        complete: false,
        stage: "load",
        error: None,
        crate_version: env!("CARGO_PKG_VERSION"),
        seeds: cfg.seeds(),
        config: cfg,
        dataset: None,
        classifier_training_accuracy: None,
        threshold: None,
        evaluated_instances: None,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    let mut stage = "load";
    let mut provenance = String::new();
    let result = run_stages(cfg, &mut stage, &mut provenance);
    manifest.stage = stage;
    manifest.dataset = Some(provenance);
    match &result {
        Ok(out) => {
            manifest.complete = true;
            manifest.stage = "done";
            manifest.classifier_training_accuracy = Some(out.explainer.classifier.training_accuracy());
            manifest.threshold = Some(out.explainer.threshold);
            manifest.evaluated_instances = Some(out.instances.len());
        }
        Err(e) => manifest.error = Some(e.to_string()),
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    result
}

fn run_stages(
    cfg: &ExperimentConfig,
    stage: &mut &'static str,
    provenance: &mut String,
) -> Result<ExperimentOutcome> {
    let dir = &cfg.output_dir;
    let (dag, data) = load_inputs(cfg).map_err(Error::stage("load"))?;
    provenance.clone_from(&data.provenance);

    *stage = "fit";
    let explainer = Explainer::fit(&data, &dag, cfg)?;
    explainer.save(dir).map_err(Error::stage("fit"))?;

    *stage = "generate";
    let instances = sample_instances(&data, cfg.eval_instances, cfg.seeds().instances);
    let rows: Vec<&[f64]> = instances.iter().map(|&i| data.features.row(i)).collect();
    let (baseline, ceils): (Vec<_>, Vec<_>) = generate_all(&explainer, &rows, cfg.workers)
        .map_err(Error::stage("generate"))?
        .into_iter()
        .unzip();

    *stage = "evaluate";
    let (baseline_metrics, ceils_metrics, report) =
        evaluate(&explainer, &baseline, &ceils).map_err(Error::stage("evaluate"))?;

    *stage = "write";
    let out = ExperimentOutcome {
        explainer,
        instances,
        baseline,
        ceils,
        baseline_metrics,
        ceils_metrics,
        report,
    };
    write_outputs(dir, &out).map_err(Error::stage("write"))?;
    Ok(out)
}

/// Reads `results.jsonl` from a finished run.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Recomputes the report of a finished run from its `results.jsonl` and
/// saved models, and rewrites `metrics.csv` and `metrics.json`.
pub fn recompute_metrics(dir: &Path) -> Result<MetricsReport> {
    let explainer = Explainer::load(dir)?;
    let records = read_results(&dir.join("results.jsonl"))?;
    let mut baseline = Vec::new();
    let mut ceils = Vec::new();
    for r in records {
        r.result.verify(&explainer.scm, &explainer.classifier, explainer.threshold, VERIFY_TOLERANCE)?;
        match r.result.method {
            Method::Baseline => baseline.push((r.instance, r.result)),
            Method::Ceils => ceils.push((r.instance, r.result)),
        }
    }
    baseline.sort_by_key(|(i, _)| *i);
    ceils.sort_by_key(|(i, _)| *i);
    if baseline.iter().map(|(i, _)| i).ne(ceils.iter().map(|(i, _)| i)) {
        return Err(Error::KeyMismatch(
            "baseline and CEILS results cover different instances".into(),
        ));
    }
    let strip = |v: Vec<(usize, CounterfactualResult)>| v.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let (_, _, report) = evaluate(&explainer, &strip(baseline), &strip(ceils))?;
    fs::write(dir.join("metrics.csv"), report.to_csv()).map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}
