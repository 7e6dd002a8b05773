//! Per-node regressors and the binary classifier's score function.
//!
//! Both are small dense networks behind a z-score input transform whose
//! statistics travel with the model, so a model file is self-contained.
//! Input gradients are obtained by backpropagation through the network and
//! the standardization.

mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureKind;
use crate::matrix::Matrix;
pub use network::{Activation, Architecture};
use network::{Network, Tape};
pub use train::TrainConfig;

/// Z-score transform of model inputs. Categorical inputs pass through as
/// integer codes (mean 0, scale 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(inputs: &Matrix, kinds: &[FeatureKind]) -> Self {
        let n = inputs.rows() as f64;
        let mut mean = vec![0.0; inputs.cols()];
        let mut scale = vec![1.0; inputs.cols()];
        for j in 0..inputs.cols() {
            if kinds[j] == FeatureKind::Categorical {
                continue;
            }
            let col = inputs.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            if var > 0.0 {
                scale[j] = var.sqrt();
            } else {
                log::warn!("input column {j} is constant; standardization scale set to 1");
            }
        }
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }
}

/// Shared body of regressors and classifiers: a network over standardized
/// inputs.
#[derive(Debug, Clone)]
struct DenseModel {
    input_names: Vec<String>,
    architecture: Architecture,
    standardizer: Standardizer,
    parameters: Vec<f64>,
    net: Network,
}

impl DenseModel {
    fn new(
        input_names: Vec<String>,
        architecture: Architecture,
        standardizer: Standardizer,
        parameters: Vec<f64>,
    ) -> Result<Self> {
        let d = input_names.len();
        let expected = architecture.parameter_count(d);
        if parameters.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: parameters.len(),
            });
        }
        if standardizer.mean.len() != d || standardizer.scale.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: standardizer.mean.len().min(standardizer.scale.len()),
            });
        }
        let net = Network::new(&architecture, d);
        Ok(DenseModel {
            input_names,
            architecture,
            standardizer,
            parameters,
            net,
        })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_names.len() {
            return Err(Error::ShapeMismatch {
                expected: self.input_names.len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn output(&self, x: &[f64]) -> f64 {
        let mut z = Vec::with_capacity(x.len());
        self.standardizer.apply(x, &mut z);
        self.net.forward(&self.parameters, &z, &mut Tape::default())
    }

    /// Network output and its gradient with respect to raw inputs.
    fn output_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut z = Vec::with_capacity(x.len());
        self.standardizer.apply(x, &mut z);
        let mut tape = Tape::default();
        let out = self.net.forward(&self.parameters, &z, &mut tape);
        self.net
            .backward(&self.parameters, &mut tape, 1.0, None, Some(grad));
        for (g, s) in grad.iter_mut().zip(&self.standardizer.scale) {
            *g /= s;
        }
        out
    }
}

/// A model whose scalar output can be differentiated with respect to its
/// inputs.
pub trait Differentiable {
    fn input_names(&self) -> &[String];

    /// Output at `x`; `x` must have one entry per input name.
    fn evaluate(&self, x: &[f64]) -> f64;

    /// Output at `x`, writing d(output)/dx into `grad`.
    fn evaluate_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Analytic gradient of the model output with respect to its inputs.
pub fn input_gradient<M: Differentiable + ?Sized>(model: &M, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.input_names().len() {
        return Err(Error::ShapeMismatch {
            expected: model.input_names().len(),
            found: x.len(),
        });
    }
    let mut grad = vec![0.0; x.len()];
    model.evaluate_with_gradient(x, &mut grad);
    Ok(grad)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TargetStats {
    mean: f64,
    scale: f64,
}

/// Serialized form shared by both model types.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    architecture: Architecture,
    input_names: Vec<String>,
    standardization: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<TargetStats>,
    parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training_accuracy: Option<f64>,
}

/// Regressor `M_v` estimating a node from its parents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct RegressorModel {
    inner: DenseModel,
    target: TargetStats,
}

impl RegressorModel {
    /// Builds a regressor from explicit parameters. `target_mean` and
    /// `target_scale` map the network output back to the target's units.
    pub fn from_parts(
        input_names: Vec<String>,
        architecture: Architecture,
        standardizer: Standardizer,
        target_mean: f64,
        target_scale: f64,
        parameters: Vec<f64>,
    ) -> Result<Self> {
        Ok(RegressorModel {
            inner: DenseModel::new(input_names, architecture, standardizer, parameters)?,
            target: TargetStats {
                mean: target_mean,
                scale: target_scale,
            },
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.inner.architecture
    }

    pub fn parameters(&self) -> &[f64] {
        &self.inner.parameters
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.inner.standardizer
    }

    pub fn predict(&self, parents: &[f64]) -> Result<f64> {
        self.inner.check(parents)?;
        Ok(self.evaluate(parents))
    }

    /// For a linear regressor, the effective `(coefficients, intercept)` in
    /// raw input and target units.
    pub fn linear_coefficients(&self) -> Option<(Vec<f64>, f64)> {
        if self.inner.architecture != Architecture::Linear {
            return None;
        }
        let d = self.inner.input_names.len();
        let p = &self.inner.parameters;
        let st = &self.inner.standardizer;
        let coef: Vec<f64> = (0..d)
            .map(|j| p[j] / st.scale[j] * self.target.scale)
            .collect();
        let intercept = self.target.mean
            + self.target.scale * p[d]
            - coef.iter().zip(&st.mean).map(|(c, m)| c * m).sum::<f64>();
        Some((coef, intercept))
    }
}

impl Differentiable for RegressorModel {
    fn input_names(&self) -> &[String] {
        &self.inner.input_names
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        self.target.mean + self.target.scale * self.inner.output(x)
    }

    fn evaluate_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let out = self.inner.output_with_gradient(x, grad);
        for g in grad.iter_mut() {
            *g *= self.target.scale;
        }
        self.target.mean + self.target.scale * out
    }
}

impl TryFrom<ModelFile> for RegressorModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let target = f
            .target
            .ok_or_else(|| Error::Config("regressor file without target statistics".into()))?;
        RegressorModel::from_parts(
            f.input_names,
            f.architecture,
            f.standardization,
            target.mean,
            target.scale,
            f.parameters,
        )
    }
}

impl From<RegressorModel> for ModelFile {
    fn from(m: RegressorModel) -> Self {
        ModelFile {
            architecture: m.inner.architecture,
            input_names: m.inner.input_names,
            standardization: m.inner.standardizer,
            target: Some(m.target),
            parameters: m.inner.parameters,
            training_accuracy: None,
        }
    }
}

/// Binary classifier with score `R(x)` in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ClassifierModel {
    inner: DenseModel,
    training_accuracy: f64,
}

impl ClassifierModel {
    pub fn from_parts(
        input_names: Vec<String>,
        architecture: Architecture,
        standardizer: Standardizer,
        parameters: Vec<f64>,
    ) -> Result<Self> {
        Ok(ClassifierModel {
            inner: DenseModel::new(input_names, architecture, standardizer, parameters)?,
            training_accuracy: f64::NAN,
        })
    }

    pub fn parameters(&self) -> &[f64] {
        &self.inner.parameters
    }

    pub fn training_accuracy(&self) -> f64 {
        self.training_accuracy
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.inner.check(x)?;
        Ok(self.evaluate(x))
    }

    /// Thresholded decision `1{R(x) > threshold}`.
    pub fn classify(&self, x: &[f64], threshold: f64) -> Result<u8> {
        Ok(u8::from(self.score(x)? > threshold))
    }
}

impl Differentiable for ClassifierModel {
    fn input_names(&self) -> &[String] {
        &self.inner.input_names
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        sigmoid(self.inner.output(x))
    }

    fn evaluate_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let s = sigmoid(self.inner.output_with_gradient(x, grad));
        let ds = s * (1.0 - s);
        for g in grad.iter_mut() {
            *g *= ds;
        }
        s
    }
}

impl TryFrom<ModelFile> for ClassifierModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let mut m = ClassifierModel::from_parts(
            f.input_names,
            f.architecture,
            f.standardization,
            f.parameters,
        )?;
        m.training_accuracy = f.training_accuracy.unwrap_or(f64::NAN);
        Ok(m)
    }
}

impl From<ClassifierModel> for ModelFile {
    fn from(m: ClassifierModel) -> Self {
        ModelFile {
            architecture: m.inner.architecture,
            input_names: m.inner.input_names,
            standardization: m.inner.standardizer,
            target: None,
            parameters: m.inner.parameters,
            training_accuracy: m.training_accuracy.is_finite().then_some(m.training_accuracy),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits a regressor of `targets` on `inputs` by minimizing squared error.
pub fn fit_regressor(
    input_names: Vec<String>,
    kinds: &[FeatureKind],
    inputs: &Matrix,
    targets: &[f64],
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<RegressorModel> {
    train::check_shapes(&input_names, kinds, inputs, targets)?;
    let standardizer = Standardizer::fit(inputs, kinds);
    let n = targets.len() as f64;
    let t_mean = targets.iter().sum::<f64>() / n;
    let t_var = targets.iter().map(|t| (t - t_mean).powi(2)).sum::<f64>() / n;
    let t_scale = if t_var > 0.0 { t_var.sqrt() } else { 1.0 };
    let scaled: Vec<f64> = targets.iter().map(|t| (t - t_mean) / t_scale).collect();

    let net = Network::new(&architecture, input_names.len());
    let params = train::train(
        &net,
        &architecture,
        &standardizer,
        inputs,
        &scaled,
        cfg,
        train::Loss::Squared,
    )?;
    RegressorModel::from_parts(
        input_names,
        architecture,
        standardizer,
        t_mean,
        t_scale,
        params,
    )
}

/// Fits a classifier on binary labels with cross-entropy loss.
pub fn fit_classifier(
    input_names: Vec<String>,
    kinds: &[FeatureKind],
    inputs: &Matrix,
    labels: &[u8],
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    train::check_shapes(&input_names, kinds, inputs, &targets)?;
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::DegenerateData("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClassData);
    }
    let standardizer = Standardizer::fit(inputs, kinds);
    let net = Network::new(&architecture, input_names.len());
    let params = train::train(
        &net,
        &architecture,
        &standardizer,
        inputs,
        &targets,
        cfg,
        train::Loss::BinaryCrossEntropy,
    )?;
    let mut model = ClassifierModel::from_parts(input_names, architecture, standardizer, params)?;
    let correct = inputs
        .iter_rows()
        .zip(labels)
        .filter(|(x, &y)| u8::from(model.evaluate(x) > 0.5) == y)
        .count();
    model.training_accuracy = correct as f64 / labels.len() as f64;
    Ok(model)
}

#[cfg(test)]
mod tests;
