//! Datasets, the synthetic generators and the on-disk formats for data and
//! DAG configurations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{Actionability, Constraint, FeasibilitySpec, Monotonicity};
use crate::graph::{CausalGraph, FeatureKind, NodeSpec};
use crate::matrix::Matrix;

/// A labelled feature table with named columns and a train/eval split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub columns: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub features: Matrix,
    pub labels: Vec<u8>,
    /// Category names per categorical column; code `i` is `codebook[col][i]`.
    pub codebooks: BTreeMap<String, Vec<String>>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub provenance: String,
}

impl DatasetBundle {
    /// Bundle with every row in the training split.
    pub fn new(
        columns: Vec<String>,
        kinds: Vec<FeatureKind>,
        features: Matrix,
        labels: Vec<u8>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for len in [kinds.len(), features.cols()] {
            if len != columns.len() {
                return Err(Error::ShapeMismatch {
                    expected: columns.len(),
                    found: len,
                });
            }
        }
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        Ok(DatasetBundle {
            columns,
            kinds,
            train: (0..features.rows()).collect(),
            eval: Vec::new(),
            features,
            labels,
            codebooks: BTreeMap::new(),
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Seeded shuffle, then the first `round(fraction * n)` rows train and
    /// the rest evaluate. Both index lists are returned sorted.
    pub fn split(&mut self, train_fraction: f64, seed: u64) -> Result<()> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
        self.train = idx[..cut].to_vec();
        self.eval = idx[cut..].to_vec();
        self.train.sort_unstable();
        self.eval.sort_unstable();
        Ok(())
    }

    pub fn train_features(&self) -> Matrix {
        self.features.select_rows(&self.train)
    }

    pub fn train_labels(&self) -> Vec<u8> {
        self.train.iter().map(|&i| self.labels[i]).collect()
    }

    /// Columns reordered to match `graph`'s nodes, matched by name.
    pub fn aligned_to(&self, graph: &CausalGraph) -> Result<DatasetBundle> {
        let mut cols = Vec::with_capacity(graph.len());
        for (idx, node) in graph.nodes().iter().enumerate() {
            let j = self
                .columns
                .iter()
                .position(|c| c == &node.name)
                .ok_or_else(|| Error::MissingColumn(node.name.clone()))?;
            if self.kinds[j] != graph.kind(idx) {
                return Err(Error::Config(format!(
                    "column `{}` is {:?} in the data but {:?} in the graph",
                    node.name,
                    self.kinds[j],
                    graph.kind(idx)
                )));
            }
            cols.push(j);
        }
        Ok(DatasetBundle {
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            kinds: cols.iter().map(|&j| self.kinds[j]).collect(),
            features: self.features.select_columns(&cols),
            codebooks: self
                .codebooks
                .iter()
                .filter(|(k, _)| graph.index_of(k).is_ok())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            ..self.clone()
        })
    }

    /// Writes the bundle as CSV with a trailing `label` column; categorical
    /// codes are written back as their category names.
    pub fn write_csv(&self, path: &Path, label: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.columns.clone();
        header.push(label.to_string());
        w.write_record(&header)?;
        for (row, y) in self.features.iter_rows().zip(&self.labels) {
            let mut rec: Vec<String> = Vec::with_capacity(row.len() + 1);
            for (j, v) in row.iter().enumerate() {
                rec.push(match self.codebooks.get(&self.columns[j]) {
                    Some(book) => book[*v as usize].clone(),
                    None => v.to_string(),
                });
            }
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite parameters")
}

/// The two-feature synthetic problem `X1 = U1`, `X2 = X1 + U2`,
/// `Y = 1{3 X2 - X1 + U_Y > t}` with `U1 ~ N(-1, 1)`, `U2 ~ N(5, 1)`,
/// `U_Y ~ N(0, 1)` and `t` the sample median of `3 X2 - X1 + U_Y`.
///
/// For even `n` exactly half the labels are 1.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<DatasetBundle> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic size {n} below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2, uy) = (normal(-1.0, 1.0), normal(5.0, 1.0), normal(0.0, 1.0));
    let mut data = Vec::with_capacity(2 * n);
    let mut latent_score = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = u1.sample(&mut rng);
        let x2 = x1 + u2.sample(&mut rng);
        data.extend([x1, x2]);
        latent_score.push(3.0 * x2 - x1 + uy.sample(&mut rng));
    }
    let mut sorted = latent_score.clone();
    sorted.sort_by(f64::total_cmp);
    // Midpoint of the two central values, so that `>` splits an even sample
    // exactly in half.
    let t = if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    };
    let labels = latent_score.iter().map(|&s| u8::from(s > t)).collect();
    DatasetBundle::new(
        vec!["X1".into(), "X2".into()],
        vec![FeatureKind::Continuous; 2],
        Matrix::new(n, 2, data)?,
        labels,
        format!("synthetic(n={n}, seed={seed})"),
    )
}

/// A credit-style table with columns `age`, `gender`, `amount`, `duration`
/// following `age -> amount <- gender`, `amount -> duration`, and a label
/// that favours older applicants and smaller, shorter loans.
///
/// Values are rounded to whole years, whole currency units and whole months.
pub fn generate_credit_like(n: usize, seed: u64) -> Result<DatasetBundle> {
    if n < 2 {
        return Err(Error::Config(format!("dataset size {n} below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (age_noise, amount_noise, duration_noise) =
        (normal(0.0, 8.0), normal(0.0, 1500.0), normal(0.0, 6.0));
    let mut data = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let age = (35.0 + age_noise.sample(&mut rng)).clamp(19.0, 75.0).round();
        let male = f64::from(u8::from(rng.random_bool(0.69)));
        let amount = (800.0 + 50.0 * age + 600.0 * male + amount_noise.sample(&mut rng))
            .max(250.0)
            .round();
        let duration = (4.0 + amount / 150.0 + duration_noise.sample(&mut rng))
            .clamp(4.0, 72.0)
            .round();
        let logit = 1.2 + 0.04 * (age - 35.0) - 0.0003 * (amount - 3000.0) - 0.05 * (duration - 24.0);
        let p = 1.0 / (1.0 + (-logit).exp());
        labels.push(u8::from(rng.random_bool(p)));
        data.extend([age, male, amount, duration]);
    }
    let mut bundle = DatasetBundle::new(
        ["age", "gender", "amount", "duration"].map(String::from).to_vec(),
        vec![
            FeatureKind::Continuous,
            FeatureKind::Categorical,
            FeatureKind::Continuous,
            FeatureKind::Continuous,
        ],
        Matrix::new(n, 4, data)?,
        labels,
        format!("credit-like(n={n}, seed={seed})"),
    )?;
    bundle
        .codebooks
        .insert("gender".into(), vec!["female".into(), "male".into()]);
    Ok(bundle)
}

/// Loads a CSV with a header row. Columns are matched to `graph`'s nodes by
/// name, `label` must hold 0/1 values, and any other column is ignored with
/// a warning. Categorical columns get sorted codebooks.
///
/// Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, graph: &CausalGraph, label: &str) -> Result<DatasetBundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let node_cols = graph
        .node_names()
        .into_iter()
        .map(find)
        .collect::<Result<Vec<_>>>()?;
    let label_col = find(label)?;
    for (j, h) in header.iter().enumerate() {
        if j != label_col && !node_cols.contains(&j) {
            log::warn!("{}: ignoring column `{h}`", path.display());
        }
    }

    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let cell = |r: usize, j: usize| -> Result<&str> {
        let v = records[r].get(j).unwrap_or("");
        if v.is_empty() || v.eq_ignore_ascii_case("na") {
            Err(Error::MissingValue {
                row: r + 1,
                column: header[j].clone(),
            })
        } else {
            Ok(v)
        }
    };
    let unparseable = |r: usize, j: usize, v: &str| Error::UnparseableValue {
        row: r + 1,
        column: header[j].clone(),
        value: v.to_string(),
    };

    let mut codebooks = BTreeMap::new();
    for (idx, &j) in node_cols.iter().enumerate() {
        if graph.kind(idx) == FeatureKind::Categorical {
            let mut values = (0..records.len())
                .map(|r| cell(r, j).map(String::from))
                .collect::<Result<Vec<_>>>()?;
            values.sort();
            values.dedup();
            codebooks.insert(header[j].clone(), values);
        }
    }

    let n = records.len();
    let mut data = Vec::with_capacity(n * node_cols.len());
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        for &j in &node_cols {
            let v = cell(r, j)?;
            let x = match codebooks.get(&header[j]) {
                Some(book) => book.binary_search_by(|c: &String| c.as_str().cmp(v)).unwrap() as f64,
                None => match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => x,
                    _ => return Err(unparseable(r, j, v)),
                },
            };
            data.push(x);
        }
        let y = cell(r, label_col)?;
        labels.push(match y {
            "0" => 0,
            "1" => 1,
            _ => return Err(unparseable(r, label_col, y)),
        });
    }

    let mut bundle = DatasetBundle::new(
        graph.node_names().into_iter().map(String::from).collect(),
        graph.nodes().iter().map(|n| n.kind).collect(),
        Matrix::new(n, node_cols.len(), data)?,
        labels,
        path.display().to_string(),
    )?;
    bundle.codebooks = codebooks;
    Ok(bundle)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    #[serde(default = "continuous")]
    kind: FeatureKind,
    #[serde(default = "actionable")]
    class: Actionability,
    #[serde(default)]
    monotone: Monotonicity,
}

fn continuous() -> FeatureKind {
    FeatureKind::Continuous
}

fn actionable() -> Actionability {
    Actionability::Actionable
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagFile {
    nodes: Vec<NodeEntry>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

/// A causal graph together with its per-node action constraints.
#[derive(Debug, Clone)]
pub struct DagConfig {
    pub graph: CausalGraph,
    pub spec: FeasibilitySpec,
}

impl DagConfig {
    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.graph.nodes().iter().map(|n| n.kind).collect()
    }

    /// Parses the JSON form
    /// `{"nodes": [{"name", "kind", "class", "monotone"}], "edges": [[src, dst]]}`.
    /// `kind` defaults to continuous, `class` to actionable and `monotone`
    /// to free.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: DagFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let graph = CausalGraph::build(
            file.nodes
                .iter()
                .map(|n| NodeSpec {
                    name: n.name.clone(),
                    kind: n.kind,
                })
                .collect(),
            &file.edges,
        )?;
        let entries: Vec<(&str, Constraint)> = file
            .nodes
            .iter()
            .map(|n| {
                (
                    n.name.as_str(),
                    Constraint {
                        class: n.class,
                        monotone: n.monotone,
                    },
                )
            })
            .collect();
        let spec = FeasibilitySpec::new(&graph, &entries)?;
        Ok(DagConfig { graph, spec })
    }
}

pub fn load_dag_config(path: &Path) -> Result<DagConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DagConfig::from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        (sxy / sxx, my - sxy / sxx * mx)
    }

    #[test]
    fn synthetic_moments() {
        let b = generate_synthetic(100_000, 1).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (x1, x2) = (b.features.column(0), b.features.column(1));
        assert!((mean(&x1) + 1.0).abs() <= 0.02);
        assert!((mean(&x2) - 4.0).abs() <= 0.02);
        assert_eq!(b.labels.iter().filter(|&&y| y == 1).count(), 50_000);
        let (slope, intercept) = ols(&x1, &x2);
        assert!((slope - 1.0).abs() <= 0.02);
        assert!((intercept - 5.0).abs() <= 0.05);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(generate_synthetic(500, 3).unwrap(), generate_synthetic(500, 3).unwrap());
        assert_ne!(generate_synthetic(500, 3).unwrap(), generate_synthetic(500, 4).unwrap());
        assert_eq!(generate_credit_like(300, 3).unwrap(), generate_credit_like(300, 3).unwrap());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let mut b = generate_synthetic(1001, 0).unwrap();
        b.split(0.8, 9).unwrap();
        assert_eq!(b.train.len(), 801);
        let mut all: Vec<usize> = b.train.iter().chain(&b.eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1001).collect::<Vec<_>>());
        assert!(b.split(1.0, 0).is_err());
    }

    fn credit_graph() -> CausalGraph {
        CausalGraph::build(
            vec![
                NodeSpec::continuous("age"),
                NodeSpec::categorical("gender"),
                NodeSpec::continuous("amount"),
                NodeSpec::continuous("duration"),
            ],
            &[("age", "amount"), ("gender", "amount"), ("amount", "duration")],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_with_extra_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.csv",
            "id,duration,amount,gender,age,label\n\
             1,12,1500,male,30,1\n\
             2,24,4000,female,45,0\n",
        );
        let b = load_csv(&p, &credit_graph(), "label").unwrap();
        assert_eq!(b.columns, ["age", "gender", "amount", "duration"]);
        assert_eq!(b.features.row(0), &[30.0, 1.0, 1500.0, 12.0]);
        assert_eq!(b.features.row(1), &[45.0, 0.0, 4000.0, 24.0]);
        assert_eq!(b.labels, [1, 0]);
        assert_eq!(b.codebooks["gender"], ["female", "male"]);

        let out = dir.path().join("out.csv");
        b.write_csv(&out, "label").unwrap();
        assert_eq!(load_csv(&out, &credit_graph(), "label").unwrap().features, b.features);
    }

    #[test]
    fn csv_errors_name_their_location() {
        let dir = tempfile::tempdir().unwrap();
        let g = credit_graph();
        let missing = write(&dir, "m.csv", "age,gender,amount,label\n30,male,100,1\n");
        assert!(matches!(load_csv(&missing, &g, "label"), Err(Error::MissingColumn(c)) if c == "duration"));

        let bad = write(
            &dir,
            "b.csv",
            "age,gender,amount,duration,label\n30,male,100,12,1\n31,male,abc,12,0\n",
        );
        match load_csv(&bad, &g, "label") {
            Err(Error::UnparseableValue { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "amount", "abc"));
            }
            other => panic!("{other:?}"),
        }

        let hole = write(&dir, "h.csv", "age,gender,amount,duration,label\n30,,100,12,1\n");
        assert!(matches!(
            load_csv(&hole, &g, "label"),
            Err(Error::MissingValue { row: 1, .. })
        ));

        let empty = write(&dir, "e.csv", "");
        assert!(matches!(load_csv(&empty, &g, "label"), Err(Error::EmptyFile(_))));
        let header_only = write(&dir, "o.csv", "age,gender,amount,duration,label\n");
        assert!(matches!(load_csv(&header_only, &g, "label"), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn dag_config_parsing() {
        let cfg = DagConfig::from_json(
            r#"{"nodes": [
                {"name": "age", "class": "actionable", "monotone": "increase_only"},
                {"name": "gender", "kind": "categorical", "class": "immutable"},
                {"name": "amount"},
                {"name": "duration"}
            ],
            "edges": [["age", "amount"], ["gender", "amount"], ["amount", "duration"]]}"#,
            Path::new("g.json"),
        )
        .unwrap();
        assert_eq!(cfg.graph.edge_count(), 3);
        assert_eq!(cfg.spec.get("age").unwrap().monotone, Monotonicity::IncreaseOnly);
        assert_eq!(cfg.spec.get("gender").unwrap().class, Actionability::Immutable);
        assert_eq!(cfg.kinds()[1], FeatureKind::Categorical);

        let bad = DagConfig::from_json(
            r#"{"nodes": [{"name": "g", "kind": "categorical", "class": "actionable"}]}"#,
            Path::new("x.json"),
        );
        assert!(matches!(bad, Err(Error::InvalidConstraint { .. })));

        let syntax = DagConfig::from_json("{\n  \"nodes\": [,]\n}", Path::new("s.json"));
        assert!(matches!(syntax, Err(Error::Parse { line: 2, .. })));

        let typo = DagConfig::from_json(r#"{"nodes": [{"name": "a", "clas": "immutable"}]}"#, Path::new("t.json"));
        assert!(matches!(typo, Err(Error::Parse { .. })));
    }
}
