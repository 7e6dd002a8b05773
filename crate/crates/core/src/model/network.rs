//! Dense feed-forward network over a flat parameter vector.
//!
//! Layer `l` stores an `out x in` row-major weight block followed by `out`
//! biases. Hidden layers apply the activation; the single output unit is
//! linear and any squashing belongs to the caller.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Architecture {
    pub fn mlp(hidden: &[usize], activation: Activation) -> Self {
        Architecture::Mlp {
            hidden: hidden.to_vec(),
            activation,
        }
    }

    pub(crate) fn layer_sizes(&self, inputs: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        if let Architecture::Mlp { hidden, .. } = self {
            sizes.extend(hidden.iter().copied());
        }
        sizes.push(1);
        sizes
    }

    pub fn parameter_count(&self, inputs: usize) -> usize {
        self.layer_sizes(inputs)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn activation(&self) -> Option<Activation> {
        match self {
            Architecture::Linear => None,
            Architecture::Mlp { activation, .. } => Some(*activation),
        }
    }
}

/// Per-call scratch space holding post-activation values of every layer.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tape {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Network {
    sizes: Vec<usize>,
    activation: Option<Activation>,
}

impl Network {
    pub fn new(arch: &Architecture, inputs: usize) -> Self {
        Network {
            sizes: arch.layer_sizes(inputs),
            activation: arch.activation(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    /// Evaluates the network on the already standardized input `z`.
    pub fn forward(&self, params: &[f64], z: &[f64], tape: &mut Tape) -> f64 {
        let n_layers = self.sizes.len() - 1;
        tape.acts.resize(self.sizes.len(), Vec::new());
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(z);
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let (w, b) = params[off..off + n_in * n_out + n_out].split_at(n_in * n_out);
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    s += wi * xi;
                }
                out.push(match self.activation {
                    Some(act) if l + 1 < n_layers => act.apply(s),
                    _ => s,
                });
            }
        }
        tape.acts[n_layers][0]
    }

    /// Backpropagates `d_out` (derivative of the loss with respect to the
    /// network output) through the values recorded by the last `forward`.
    /// Parameter gradients are accumulated into `grad_params`; the gradient
    /// with respect to the standardized input is written to `grad_input`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &mut Tape,
        d_out: f64,
        mut grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        let layers: Vec<_> = self.layers().collect();
        tape.delta.clear();
        tape.delta.push(d_out);
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let w = &params[off..off + n_in * n_out];
            let input = &tape.acts[l];
            if let Some(g) = grad_params.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = tape.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *gwi += d * xi;
                    }
                    gb[o] += d;
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            tape.next.clear();
            tape.next.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = tape.delta[o];
                if d == 0.0 {
                    continue;
                }
                for (ni, wi) in tape.next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *ni += wi * d;
                }
            }
            if l > 0 {
                let act = self.activation.expect("hidden layer without activation");
                for (ni, yi) in tape.next.iter_mut().zip(input) {
                    *ni *= act.derivative_from_output(*yi);
                }
            }
            std::mem::swap(&mut tape.delta, &mut tape.next);
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&tape.delta[..self.inputs()]);
        }
    }
}
