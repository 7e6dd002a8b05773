//! Evaluation metrics for counterfactual explanations and their actions.
//!
//! Per-instance quantities are computed by [`MetricContext::evaluate`] from
//! statistics of the training split; [`aggregate`] turns them into medians
//! with median absolute deviations, over a method's valid set or over the
//! set of instances both methods explained validly.
//!
//! Proximity and sparsity work on raw values scaled by MAD. Distance, cost,
//! causal plausibility and the direction gap are L1 norms over standardized
//! values (each coordinate divided by the training standard deviation of the
//! corresponding feature).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{is_feasible, FeasibilitySpec, DEFAULT_TOLERANCE};
use crate::graph::FeatureKind;
use crate::matrix::Matrix;
use crate::scm::StructuralModel;
use crate::search::{CounterfactualResult, Method};

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = sorted(values);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> Result<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = sorted(values);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Change threshold `min(MAD(f), q10(|f' - median(f')|))`, where `f'` keeps
/// the values of `f` that differ from its median.
pub fn sparsity_threshold(values: &[f64]) -> Result<f64> {
    let m = median(values)?;
    let spread = mad(values)?;
    let off: Vec<f64> = values.iter().copied().filter(|&v| v != m).collect();
    if off.is_empty() {
        return Ok(spread);
    }
    let m_off = median(&off)?;
    let dev: Vec<f64> = off.iter().map(|v| (v - m_off).abs()).collect();
    Ok(spread.min(quantile(&dev, 0.10)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proximity {
    pub continuous: Option<f64>,
    pub categorical: Option<f64>,
}

/// Mean MAD-scaled L1 change over continuous features and fraction of
/// changed categorical features. A component is `None` when there is no
/// feature of that kind.
pub fn proximity(xcf: &[f64], x: &[f64], kinds: &[FeatureKind], mads: &[f64]) -> Result<Proximity> {
    let (mut cont, mut n_cont, mut cat, mut n_cat) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..x.len() {
        match kinds[i] {
            FeatureKind::Continuous => {
                if mads[i] <= 0.0 {
                    return Err(Error::ZeroMad(format!("#{i}")));
                }
                cont += (xcf[i] - x[i]).abs() / mads[i];
                n_cont += 1;
            }
            FeatureKind::Categorical => {
                if xcf[i] != x[i] {
                    cat += 1.0;
                }
                n_cat += 1;
            }
        }
    }
    Ok(Proximity {
        continuous: (n_cont > 0).then(|| cont / n_cont as f64),
        categorical: (n_cat > 0).then(|| cat / n_cat as f64),
    })
}

/// Number of coordinates whose change exceeds its threshold.
pub fn sparsity(xcf: &[f64], x: &[f64], thresholds: &[f64]) -> usize {
    xcf.iter()
        .zip(x)
        .zip(thresholds)
        .filter(|((a, b), t)| (*a - *b).abs() > **t)
        .count()
}

pub fn distance(xcf: &[f64], x: &[f64]) -> f64 {
    xcf.iter().zip(x).map(|(a, b)| (a - b).abs()).sum()
}

pub fn cost(action: &[f64]) -> f64 {
    action.iter().map(|a| a.abs()).sum()
}

/// L1 distance between `xcf` and its zero-residual profile under `scm`.
pub fn causal_plausibility(scm: &StructuralModel, xcf: &[f64]) -> Result<f64> {
    let w = scm.zero_residual_profile(xcf)?;
    Ok(distance(xcf, &w))
}

/// `|(x_base_cf - x0) - a_ceils|_1`.
pub fn direction_gap(x_base_cf: &[f64], x0: &[f64], a_ceils: &[f64]) -> f64 {
    x_base_cf
        .iter()
        .zip(x0)
        .zip(a_ceils)
        .map(|((b, x), a)| (b - x - a).abs())
        .sum()
}

/// Training-split statistics needed to evaluate explanations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricContext {
    pub kinds: Vec<FeatureKind>,
    /// Standard deviation of each feature, 1 where it vanishes.
    pub feature_std: Vec<f64>,
    /// MAD of each feature, 1 where it vanishes.
    pub feature_mad: Vec<f64>,
    pub feature_thresholds: Vec<f64>,
    pub action_thresholds: Vec<f64>,
    pub spec: FeasibilitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub proximity_cont: Option<f64>,
    pub proximity_cat: Option<f64>,
    pub sparsity: f64,
    pub distance: f64,
    pub sparsity_actions: f64,
    pub cost: f64,
    pub feasible: bool,
    pub causal_plausibility: f64,
}

pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// MAD with the `MAD = 0 -> 1` fallback, logging each substitution.
pub fn mad_with_fallback(values: &[f64], name: &str) -> Result<f64> {
    let m = mad(values)?;
    if m > 0.0 {
        Ok(m)
    } else {
        log::warn!("MAD of `{name}` is zero; using 1.0");
        Ok(1.0)
    }
}

impl MetricContext {
    /// `features` and `latents` hold training rows in node order.
    pub fn fit(
        features: &Matrix,
        latents: &Matrix,
        kinds: &[FeatureKind],
        names: &[&str],
        spec: FeasibilitySpec,
    ) -> Result<Self> {
        let mut ctx = MetricContext {
            kinds: kinds.to_vec(),
            feature_std: Vec::new(),
            feature_mad: Vec::new(),
            feature_thresholds: Vec::new(),
            action_thresholds: Vec::new(),
            spec,
        };
        for j in 0..features.cols() {
            let col = features.column(j);
            let sd = std_dev(&col);
            ctx.feature_std.push(if sd > 0.0 { sd } else { 1.0 });
            ctx.feature_mad.push(mad_with_fallback(&col, names[j])?);
            ctx.feature_thresholds.push(sparsity_threshold(&col)?);
            ctx.action_thresholds
                .push(sparsity_threshold(&latents.column(j))?);
        }
        Ok(ctx)
    }

    fn standardized(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.feature_std).map(|(a, s)| a / s).collect()
    }

    pub fn evaluate(&self, scm: &StructuralModel, r: &CounterfactualResult) -> Result<InstanceMetrics> {
        let prox = proximity(&r.counterfactual, &r.factual, &self.kinds, &self.feature_mad)?;
        let action = r.action.as_slice();
        let residual: Vec<f64> = {
            let w = scm.zero_residual_profile(&r.counterfactual)?;
            r.counterfactual.iter().zip(&w).map(|(a, b)| a - b).collect()
        };
        Ok(InstanceMetrics {
            proximity_cont: prox.continuous,
            proximity_cat: prox.categorical,
            sparsity: sparsity(&r.counterfactual, &r.factual, &self.feature_thresholds) as f64,
            distance: distance(
                &self.standardized(&r.counterfactual),
                &self.standardized(&r.factual),
            ),
            sparsity_actions: sparsity(action, &vec![0.0; action.len()], &self.action_thresholds)
                as f64,
            cost: cost(&self.standardized(action)),
            feasible: is_feasible(&r.action, &self.spec, DEFAULT_TOLERANCE)?,
            causal_plausibility: cost(&self.standardized(&residual)),
        })
    }

    /// Direction gap between a baseline and a CEILS result for the same
    /// instance, on standardized values.
    pub fn direction_gap(&self, baseline: &CounterfactualResult, ceils: &CounterfactualResult) -> f64 {
        direction_gap(
            &self.standardized(&baseline.counterfactual),
            &self.standardized(&baseline.factual),
            &self.standardized(ceils.action.as_slice()),
        )
    }
}

/// Median and median absolute deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub deviation: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Summary> {
        Some(Summary {
            median: median(values).ok()?,
            deviation: mad(values).ok()?,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    Intersection,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Intersection => "intersection",
        }
    }
}

/// One row of the report: a method evaluated over one scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBlock {
    pub method: Method,
    pub scope: Scope,
    pub attempted: usize,
    /// Instances the statistics below are computed over.
    pub evaluated: usize,
    /// Valid fraction of the attempted instances (scope `all`) or `None`
    /// (scope `intersection`, where `evaluated` is the common count).
    pub validity: Option<f64>,
    pub proximity_cont: Option<Summary>,
    pub proximity_cat: Option<Summary>,
    pub sparsity: Option<Summary>,
    pub distance: Option<Summary>,
    pub sparsity_actions: Option<Summary>,
    pub cost: Option<Summary>,
    /// Feasible fraction of the evaluated instances.
    pub feasibility: Option<f64>,
    pub causal_plausibility: Option<Summary>,
}

/// Summarizes `values` over instances that are valid and inside `scope_mask`.
pub fn aggregate(
    method: Method,
    scope: Scope,
    values: &[InstanceMetrics],
    valid: &[bool],
    scope_mask: &[bool],
) -> Result<MethodBlock> {
    if values.len() != valid.len() || valid.len() != scope_mask.len() {
        return Err(Error::ShapeMismatch {
            expected: values.len(),
            found: valid.len().min(scope_mask.len()),
        });
    }
    let picked: Vec<&InstanceMetrics> = values
        .iter()
        .zip(valid.iter().zip(scope_mask))
        .filter(|(_, (&v, &m))| v && m)
        .map(|(x, _)| x)
        .collect();
    let collect = |f: &dyn Fn(&InstanceMetrics) -> Option<f64>| -> Option<Summary> {
        let vals: Vec<f64> = picked.iter().filter_map(|m| f(m)).collect();
        Summary::of(&vals)
    };
    let n_valid = valid.iter().filter(|&&v| v).count();
    let evaluated = picked.len();
    Ok(MethodBlock {
        method,
        scope,
        attempted: values.len(),
        evaluated,
        validity: match scope {
            Scope::All if !values.is_empty() => Some(n_valid as f64 / values.len() as f64),
            _ => None,
        },
        proximity_cont: collect(&|m| m.proximity_cont),
        proximity_cat: collect(&|m| m.proximity_cat),
        sparsity: collect(&|m| Some(m.sparsity)),
        distance: collect(&|m| Some(m.distance)),
        sparsity_actions: collect(&|m| Some(m.sparsity_actions)),
        cost: collect(&|m| Some(m.cost)),
        feasibility: (evaluated > 0)
            .then(|| picked.iter().filter(|m| m.feasible).count() as f64 / evaluated as f64),
        causal_plausibility: collect(&|m| Some(m.causal_plausibility)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub blocks: Vec<MethodBlock>,
    pub intersection_count: usize,
    pub direction_gap: Option<Summary>,
}

pub const CSV_HEADER: &str = "method,scope,validity,proximity_cont,proximity_cont_dev,\
proximity_cat,proximity_cat_dev,sparsity,sparsity_dev,distance,distance_dev,\
sparsity_actions,sparsity_actions_dev,cost,cost_dev,feasibility,causal_plausibility,\
causal_plausibility_dev,n_evaluated,direction_gap,direction_gap_dev";

fn cell(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => write!(out, ",{v:.6}").unwrap(),
        None => out.push_str(",NA"),
    }
}

fn pair(out: &mut String, s: Option<Summary>) {
    cell(out, s.map(|s| s.median));
    cell(out, s.map(|s| s.deviation));
}

impl MetricsReport {
    /// Builds the four-row report (each method over its valid set and over
    /// the common valid set) from per-instance metrics of both methods.
    pub fn build(
        baseline: &[InstanceMetrics],
        baseline_valid: &[bool],
        ceils: &[InstanceMetrics],
        ceils_valid: &[bool],
        direction_gaps: &[Option<f64>],
    ) -> Result<Self> {
        let all = vec![true; baseline.len()];
        let common: Vec<bool> = baseline_valid
            .iter()
            .zip(ceils_valid)
            .map(|(a, b)| *a && *b)
            .collect();
        let gaps: Vec<f64> = direction_gaps
            .iter()
            .zip(&common)
            .filter_map(|(g, &c)| if c { *g } else { None })
            .collect();
        Ok(MetricsReport {
            blocks: vec![
                aggregate(Method::Baseline, Scope::All, baseline, baseline_valid, &all)?,
                aggregate(Method::Ceils, Scope::All, ceils, ceils_valid, &all)?,
                aggregate(Method::Baseline, Scope::Intersection, baseline, baseline_valid, &common)?,
                aggregate(Method::Ceils, Scope::Intersection, ceils, ceils_valid, &common)?,
            ],
            intersection_count: common.iter().filter(|&&c| c).count(),
            direction_gap: Summary::of(&gaps),
        })
    }

    pub fn block(&self, method: Method, scope: Scope) -> Option<&MethodBlock> {
        self.blocks
            .iter()
            .find(|b| b.method == method && b.scope == scope)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for b in &self.blocks {
            out.push_str(b.method.as_str());
            out.push(',');
            out.push_str(b.scope.as_str());
            cell(&mut out, b.validity);
            pair(&mut out, b.proximity_cont);
            pair(&mut out, b.proximity_cat);
            pair(&mut out, b.sparsity);
            pair(&mut out, b.distance);
            pair(&mut out, b.sparsity_actions);
            pair(&mut out, b.cost);
            cell(&mut out, b.feasibility);
            pair(&mut out, b.causal_plausibility);
            write!(out, ",{}", b.evaluated).unwrap();
            pair(
                &mut out,
                match b.scope {
                    Scope::Intersection => self.direction_gap,
                    Scope::All => None,
                },
            );
            out.push('\n');
        }
        out
    }
}
