//! Counterfactual generators.
//!
//! [`baseline_generate`] runs the gradient search directly on the
//! classifier in feature space, treating every constraint as a hard
//! intervention on the feature itself; its action is recovered afterwards
//! by abduction ([`ex_post_action`]). [`ceils_generate`] runs the same
//! search on the composed score `u -> R(F(u))` over the residual space of a
//! structural model, so that a latent shift on one node propagates to its
//! descendants and constraints bind the action rather than the feature.

mod engine;

use serde::{Deserialize, Serialize};

pub use engine::{gradient_cf_search, FnScore, ScoreFunction, SearchConfig, SearchDomain, SearchOutcome};

use crate::error::{Error, Result};
use crate::feasibility::{ActionVector, FeasibilitySpec};
use crate::model::{ClassifierModel, Differentiable};
use crate::scm::{LatentVector, StructuralModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Ceils,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ceils => "ceils",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub method: Method,
    pub factual: Vec<f64>,
    pub counterfactual: Vec<f64>,
    pub latent_factual: LatentVector,
    pub latent_counterfactual: LatentVector,
    pub action: ActionVector,
    pub factual_label: u8,
    pub counterfactual_label: u8,
    pub valid: bool,
    pub iterations: usize,
}

impl CounterfactualResult {
    /// Re-checks the structural invariants of a result against the models
    /// that produced it.
    pub fn verify(
        &self,
        scm: &StructuralModel,
        clf: &ClassifierModel,
        threshold: f64,
        tol: f64,
    ) -> Result<()> {
        let fail = |what: &str| Err(Error::Config(format!("{} result: {what}", self.method.as_str())));
        let l0 = clf.classify(&self.factual, threshold)?;
        let l1 = clf.classify(&self.counterfactual, threshold)?;
        if l0 != self.factual_label || l1 != self.counterfactual_label {
            return fail("stored labels disagree with the classifier");
        }
        if self.valid != (l0 != l1) {
            return fail("validity flag disagrees with the labels");
        }
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
        let shifted: Vec<f64> = self
            .latent_factual
            .0
            .iter()
            .zip(&self.action.0)
            .map(|(u, a)| u + a)
            .collect();
        if !close(&shifted, &self.latent_counterfactual.0) {
            return fail("latent counterfactual is not factual plus action");
        }
        match self.method {
            Method::Ceils => {
                if !close(&scm.forward(&self.latent_counterfactual)?, &self.counterfactual) {
                    return fail("counterfactual is not the forward image of its latent");
                }
            }
            Method::Baseline => {
                let a = ex_post_action(scm, &self.factual, &self.counterfactual)?;
                if !close(&a.0, &self.action.0) {
                    return fail("action is not the ex-post action");
                }
            }
        }
        Ok(())
    }
}

impl ScoreFunction for ClassifierModel {
    fn dim(&self) -> usize {
        self.input_names().len()
    }

    fn score_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate_with_gradient(x, grad)
    }
}

/// The classifier seen from the residual space: `u -> R(F(u))`.
pub struct LatentScore<'a> {
    pub scm: &'a StructuralModel,
    pub clf: &'a ClassifierModel,
}

impl ScoreFunction for LatentScore<'_> {
    fn dim(&self) -> usize {
        self.scm.graph().len()
    }

    fn score_with_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let x = self
            .scm
            .forward(&LatentVector(u.to_vec()))
            .expect("latent vector sized by dim()");
        let mut gx = vec![0.0; x.len()];
        let s = self.clf.evaluate_with_gradient(&x, &mut gx);
        grad.copy_from_slice(&self.scm.pullback(&x, &gx));
        s
    }
}

/// `abduct(xcf) - abduct(x0)`.
pub fn ex_post_action(scm: &StructuralModel, x0: &[f64], xcf: &[f64]) -> Result<ActionVector> {
    let u0 = scm.abduct(x0)?;
    let u1 = scm.abduct(xcf)?;
    Ok(ActionVector(
        u1.0.iter().zip(&u0.0).map(|(a, b)| a - b).collect(),
    ))
}

fn check_inputs(scm: &StructuralModel, clf: &ClassifierModel, spec: &FeasibilitySpec, x0: &[f64]) -> Result<()> {
    spec.check_graph(scm.graph())?;
    let names = scm.graph().node_names();
    if clf.input_names().iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::KeyMismatch(format!(
            "classifier inputs {:?} vs graph nodes {names:?}",
            clf.input_names()
        )));
    }
    if x0.len() != names.len() {
        return Err(Error::ShapeMismatch {
            expected: names.len(),
            found: x0.len(),
        });
    }
    Ok(())
}

/// Counterfactual searched in the residual space: abduction of `x0`,
/// search over the latent shift under `spec`, prediction through the
/// forward map.
///
/// `domain` describes the latent coordinates (see
/// [`SearchDomain::from_samples`] on abducted training rows).
pub fn ceils_generate(
    scm: &StructuralModel,
    clf: &ClassifierModel,
    threshold: f64,
    x0: &[f64],
    spec: &FeasibilitySpec,
    domain: &SearchDomain,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    check_inputs(scm, clf, spec, x0)?;
    let u0 = scm.abduct(x0)?;
    let label = clf.classify(x0, threshold)?;
    let bounds: Vec<(f64, f64)> = spec.constraints().iter().map(|c| c.bounds()).collect();
    let score = LatentScore { scm, clf };
    let out = gradient_cf_search(&score, &u0.0, 1 - label, threshold, &bounds, domain, cfg)?;
    let u_cf = LatentVector(out.candidate);
    let action = ActionVector(u_cf.0.iter().zip(&u0.0).map(|(a, b)| a - b).collect());
    let xcf = scm.forward(&u_cf)?;
    let cf_label = clf.classify(&xcf, threshold)?;
    Ok(CounterfactualResult {
        method: Method::Ceils,
        factual: x0.to_vec(),
        counterfactual: xcf,
        latent_factual: u0,
        latent_counterfactual: u_cf,
        action,
        factual_label: label,
        counterfactual_label: cf_label,
        valid: cf_label != label,
        iterations: out.iterations,
    })
}

/// Counterfactual searched directly in feature space. Frozen nodes keep
/// their feature value and monotone nodes bound the feature change; the
/// reported action is the ex-post action under `scm`.
///
/// `domain` describes the feature coordinates.
pub fn baseline_generate(
    scm: &StructuralModel,
    clf: &ClassifierModel,
    threshold: f64,
    x0: &[f64],
    spec: &FeasibilitySpec,
    domain: &SearchDomain,
    cfg: &SearchConfig,
) -> Result<CounterfactualResult> {
    check_inputs(scm, clf, spec, x0)?;
    let label = clf.classify(x0, threshold)?;
    let bounds: Vec<(f64, f64)> = spec.constraints().iter().map(|c| c.bounds()).collect();
    let out = gradient_cf_search(clf, x0, 1 - label, threshold, &bounds, domain, cfg)?;
    let xcf = out.candidate;
    let u0 = scm.abduct(x0)?;
    let u_cf = scm.abduct(&xcf)?;
    let action = ex_post_action(scm, x0, &xcf)?;
    let cf_label = clf.classify(&xcf, threshold)?;
    Ok(CounterfactualResult {
        method: Method::Baseline,
        factual: x0.to_vec(),
        counterfactual: xcf,
        latent_factual: u0,
        latent_counterfactual: u_cf,
        action,
        factual_label: label,
        counterfactual_label: cf_label,
        valid: cf_label != label,
        iterations: out.iterations,
    })
}
