use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network, Tape};
use super::{sigmoid, Standardizer};
use crate::error::{Error, Result};
use crate::graph::FeatureKind;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per update; `None` uses the whole training set.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub l2: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 300,
            batch_size: None,
            seed: 0,
            l2: 0.0,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.batch_size != Some(0)
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Loss {
    /// `0.5 (out - y)^2`
    Squared,
    /// Cross-entropy on `sigmoid(out)`.
    BinaryCrossEntropy,
}

impl Loss {
    fn value_and_derivative(self, out: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Squared => {
                let r = out - y;
                (0.5 * r * r, r)
            }
            Loss::BinaryCrossEntropy => {
                // log(1 + e^out) - y * out, written to avoid overflow.
                let softplus = out.max(0.0) + (-out.abs()).exp().ln_1p();
                (softplus - y * out, sigmoid(out) - y)
            }
        }
    }
}

pub(super) fn check_shapes(
    names: &[String],
    kinds: &[FeatureKind],
    inputs: &Matrix,
    targets: &[f64],
) -> Result<()> {
    if inputs.cols() != names.len() {
        return Err(Error::ShapeMismatch {
            expected: names.len(),
            found: inputs.cols(),
        });
    }
    if kinds.len() != names.len() {
        return Err(Error::ShapeMismatch {
            expected: names.len(),
            found: kinds.len(),
        });
    }
    if inputs.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: inputs.rows(),
            found: targets.len(),
        });
    }
    if targets.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "{} rows; at least 2 required",
            targets.len()
        )));
    }
    if inputs.iter_rows().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite value in training data".into()));
    }
    Ok(())
}

fn initial_parameters(net: &Network, arch: &Architecture, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sizes = arch.layer_sizes(net.inputs());
    let mut params = Vec::with_capacity(arch.parameter_count(net.inputs()));
    for w in sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        match arch {
            // Convex problem: start at zero so null targets stay exactly null.
            Architecture::Linear => params.extend(std::iter::repeat(0.0).take(n_in * n_out)),
            Architecture::Mlp { .. } => {
                let bound = 1.0 / (n_in.max(1) as f64).sqrt();
                params.extend((0..n_in * n_out).map(|_| rng.random_range(-bound..bound)));
            }
        }
        params.extend(std::iter::repeat(0.0).take(n_out));
    }
    params
}

/// Gradient descent with momentum on the mean loss plus an L2 penalty on
/// weights; full-batch unless `cfg.batch_size` is set. Deterministic given
/// `cfg.seed`.
pub(super) fn train(
    net: &Network,
    arch: &Architecture,
    standardizer: &Standardizer,
    inputs: &Matrix,
    targets: &[f64],
    cfg: &TrainConfig,
    loss: Loss,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial_parameters(net, arch, &mut rng);
    let is_weight = weight_mask(arch, net.inputs());

    let n = targets.len();
    let z: Vec<Vec<f64>> = inputs
        .iter_rows()
        .map(|x| {
            let mut out = Vec::with_capacity(x.len());
            standardizer.apply(x, &mut out);
            out
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut tape = Tape::default();
    let batch = cfg.batch_size.map_or(n, |b| b.min(n));

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let out = net.forward(&params, &z[i], &mut tape);
                let (l, d) = loss.value_and_derivative(out, targets[i]);
                epoch_loss += l;
                net.backward(&params, &mut tape, d * scale, Some(&mut grad), None);
            }
            for (k, p) in params.iter_mut().enumerate() {
                let mut g = grad[k];
                if is_weight[k] {
                    g += cfg.l2 * *p;
                }
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * g;
                *p += velocity[k];
            }
        }
        if !epoch_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss(epoch));
        }
    }
    Ok(params)
}

fn weight_mask(arch: &Architecture, inputs: usize) -> Vec<bool> {
    arch.layer_sizes(inputs)
        .windows(2)
        .flat_map(|w| {
            std::iter::repeat(true)
                .take(w[0] * w[1])
                .chain(std::iter::repeat(false).take(w[1]))
        })
        .collect()
}
