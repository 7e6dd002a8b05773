//! Additive-noise structural causal model fitted from data.
//!
//! Every node obeys `x_v = f_v(pa(x_v)) + u_v`, with `f_v` estimated by a
//! regressor on the node's parents (roots have `x_v = u_v`). Abduction reads
//! the residuals `u = x - M(pa(x))` off an observation; the forward map
//! rebuilds `x = F(u)` by evaluating the regressors along a topological
//! order. Both maps are exact inverses of each other by construction.
//!
//! Feature and latent vectors are plain slices aligned with the graph's node
//! declaration order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, FeatureKind};
use crate::matrix::Matrix;
use crate::model::{fit_regressor, Architecture, Differentiable, RegressorModel, TrainConfig};

/// Exogenous coordinates `u_v`, aligned with the graph's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_map<'g>(&self, graph: &'g CausalGraph) -> Vec<(&'g str, f64)> {
        graph.node_names().into_iter().zip(self.0.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScmFile {
    graph: CausalGraph,
    regressors: HashMap<String, RegressorModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScmFile", into = "ScmFile")]
pub struct StructuralModel {
    graph: CausalGraph,
    /// One regressor per non-root node, `None` for roots.
    regressors: Vec<Option<RegressorModel>>,
}

impl StructuralModel {
    /// Assembles a model from already fitted regressors, keyed by node name.
    pub fn from_regressors(
        graph: CausalGraph,
        mut regressors: HashMap<String, RegressorModel>,
    ) -> Result<Self> {
        let mut slots = Vec::with_capacity(graph.len());
        for idx in 0..graph.len() {
            let name = graph.name(idx);
            let reg = regressors.remove(name);
            match (graph.is_root(idx), reg) {
                (true, None) => slots.push(None),
                (true, Some(_)) => {
                    return Err(Error::Config(format!("root node `{name}` has a regressor")))
                }
                (false, None) => {
                    return Err(Error::Config(format!("node `{name}` has no regressor")))
                }
                (false, Some(r)) => {
                    let parents = graph.parents(name)?;
                    if r.input_names().iter().map(String::as_str).ne(parents.iter().copied()) {
                        return Err(Error::KeyMismatch(format!(
                            "regressor for `{name}` expects {:?}, parents are {parents:?}",
                            r.input_names()
                        )));
                    }
                    slots.push(Some(r));
                }
            }
        }
        if let Some(extra) = regressors.keys().next() {
            return Err(Error::UnknownNode(extra.clone()));
        }
        Ok(StructuralModel {
            graph,
            regressors: slots,
        })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn regressor(&self, name: &str) -> Result<Option<&RegressorModel>> {
        Ok(self.regressors[self.graph.index_of(name)?].as_ref())
    }

    pub fn regressor_count(&self) -> usize {
        self.regressors.iter().flatten().count()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.graph.len() {
            return Err(Error::ShapeMismatch {
                expected: self.graph.len(),
                found: v.len(),
            });
        }
        Ok(())
    }

    fn parent_values(&self, idx: usize, x: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.graph.parent_indices(idx).iter().map(|&p| x[p]));
    }

    /// Orders named values by graph node; errors on the first node missing
    /// from `values`.
    pub fn align(&self, values: &HashMap<String, f64>) -> Result<Vec<f64>> {
        self.graph
            .node_names()
            .into_iter()
            .map(|n| {
                values
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::MissingColumn(n.to_string()))
            })
            .collect()
    }

    /// `M_v(pa(x))` for non-root nodes and `x_v` for roots: the profile `x`
    /// would have with all non-root residuals set to zero.
    pub fn zero_residual_profile(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut buf = Vec::new();
        Ok((0..self.graph.len())
            .map(|i| match &self.regressors[i] {
                None => x[i],
                Some(m) => {
                    self.parent_values(i, x, &mut buf);
                    m.evaluate(&buf)
                }
            })
            .collect())
    }

    /// Residuals `u = x - M(pa(x))`; roots pass through unchanged.
    pub fn abduct(&self, x: &[f64]) -> Result<LatentVector> {
        let w = self.zero_residual_profile(x)?;
        Ok(LatentVector(
            (0..x.len())
                .map(|i| {
                    if self.regressors[i].is_some() {
                        x[i] - w[i]
                    } else {
                        x[i]
                    }
                })
                .collect(),
        ))
    }

    /// Abducts every row of `data` (columns in node order).
    pub fn abduct_all(&self, data: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for (i, row) in data.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.abduct(row)?.0);
        }
        Ok(out)
    }

    /// `x = F(u)`, evaluated along the graph's topological order.
    pub fn forward(&self, u: &LatentVector) -> Result<Vec<f64>> {
        self.forward_in_order(u, self.graph.topological_indices())
    }

    /// `x = F(u)` evaluated along a caller-supplied topological order.
    pub fn forward_in_order(&self, u: &LatentVector, order: &[usize]) -> Result<Vec<f64>> {
        self.check(&u.0)?;
        if !self.graph.is_topological(order) {
            return Err(Error::Config("order is not topological".into()));
        }
        let mut x = vec![f64::NAN; u.0.len()];
        let mut buf = Vec::new();
        for &i in order {
            x[i] = match &self.regressors[i] {
                None => u.0[i],
                Some(m) => {
                    self.parent_values(i, &x, &mut buf);
                    m.evaluate(&buf) + u.0[i]
                }
            };
        }
        Ok(x)
    }

    /// Vector-Jacobian product of the forward map: given `x = F(u)` and
    /// `grad_x = dL/dx`, returns `dL/du`.
    ///
    /// Adjoints flow backwards through the topological order; each non-root
    /// node passes its adjoint to its parents weighted by the regressor's
    /// input gradient.
    pub fn pullback(&self, x: &[f64], grad_x: &[f64]) -> Vec<f64> {
        let mut adj = grad_x.to_vec();
        let mut buf = Vec::new();
        let mut g = Vec::new();
        for &i in self.graph.topological_indices().iter().rev() {
            let Some(m) = &self.regressors[i] else {
                continue;
            };
            if adj[i] == 0.0 {
                continue;
            }
            self.parent_values(i, x, &mut buf);
            g.clear();
            g.resize(buf.len(), 0.0);
            m.evaluate_with_gradient(&buf, &mut g);
            for (&p, gp) in self.graph.parent_indices(i).iter().zip(&g) {
                adj[p] += adj[i] * gp;
            }
        }
        adj
    }
}

impl TryFrom<ScmFile> for StructuralModel {
    type Error = Error;

    fn try_from(f: ScmFile) -> Result<Self> {
        StructuralModel::from_regressors(f.graph, f.regressors)
    }
}

impl From<StructuralModel> for ScmFile {
    fn from(m: StructuralModel) -> Self {
        let regressors = m
            .regressors
            .into_iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (m.graph.name(i).to_string(), r)))
            .collect();
        ScmFile {
            graph: m.graph,
            regressors,
        }
    }
}

/// Fits one regressor per non-root node on its parents.
///
/// `columns` names the columns of `data`; they are matched to graph nodes by
/// name. Nodes are visited repeatedly in declaration order and a node is
/// fitted once all its parents have been, until every node is covered.
pub fn fit_scm(
    data: &Matrix,
    columns: &[String],
    graph: &CausalGraph,
    architecture: &Architecture,
    cfg: &TrainConfig,
) -> Result<StructuralModel> {
    let col_of: HashMap<&str, usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let layout = graph
        .node_names()
        .into_iter()
        .map(|n| {
            col_of
                .get(n)
                .copied()
                .ok_or_else(|| Error::MissingColumn(n.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    for idx in 0..graph.len() {
        if !graph.is_root(idx) && graph.kind(idx) == FeatureKind::Categorical {
            return Err(Error::InvalidConstraint {
                node: graph.name(idx).to_string(),
                reason: "categorical features are only supported at root nodes".into(),
            });
        }
    }

    let mut done: Vec<bool> = (0..graph.len()).map(|i| graph.is_root(i)).collect();
    let mut regressors = HashMap::new();
    while done.iter().any(|d| !d) {
        for v in 0..graph.len() {
            let parents = graph.parent_indices(v);
            if done[v] || !parents.iter().all(|&p| done[p]) {
                continue;
            }
            let parent_cols: Vec<usize> = parents.iter().map(|&p| layout[p]).collect();
            let inputs = data.select_columns(&parent_cols);
            let target = data.column(layout[v]);
            let names = parents.iter().map(|&p| graph.name(p).to_string()).collect();
            let kinds: Vec<FeatureKind> = parents.iter().map(|&p| graph.kind(p)).collect();
            let node_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(v as u64),
                ..cfg.clone()
            };
            let model = fit_regressor(
                names,
                &kinds,
                &inputs,
                &target,
                architecture.clone(),
                &node_cfg,
            )?;
            regressors.insert(graph.name(v).to_string(), model);
            done[v] = true;
        }
    }
    StructuralModel::from_regressors(graph.clone(), regressors)
}
