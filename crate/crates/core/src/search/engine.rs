//! Staged-lambda proximal gradient search for the nearest counterfactual.
//!
//! Minimizes `hinge(R(x)) + lambda * sum_i w_i |x_i - x0_i|` where the hinge
//! asks the score to clear the threshold by a margin on the side of the
//! target class. Iterates live in standardized delta coordinates
//! `s_i = (x_i - x0_i) / scale_i`. Each iteration takes a gradient step on
//! the hinge (normalized by its largest component so that saturated scores
//! still move), applies the L1 proximal operator (soft thresholding, which
//! keeps untouched coordinates exactly at zero), and projects onto the
//! admissible box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{mad, std_dev};

/// A differentiable score in `[0, 1]`.
pub trait ScoreFunction {
    fn dim(&self) -> usize;

    /// Score at `x`, writing its gradient into `grad`.
    fn score_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Wraps a closure `x -> (score, gradient)`.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> ScoreFunction for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (s, g) = (self.f)(x);
        grad.copy_from_slice(&g);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lambda_init: f64,
    pub lambda_growth: f64,
    pub max_stages: usize,
    /// Step length in standardized units.
    pub step_size: f64,
    pub max_iterations: usize,
    /// Score offset beyond the threshold the hinge asks for.
    pub margin: f64,
    /// Extra perturbed restarts tried when no valid point was found.
    pub restarts: usize,
    pub seed: u64,
    /// Confine candidates to the observed range of each coordinate.
    pub bounded: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda_init: 0.1,
            lambda_growth: 2.0,
            max_stages: 5,
            step_size: 0.05,
            max_iterations: 500,
            margin: 0.05,
            restarts: 0,
            seed: 0,
            bounded: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_init > 0.0
            && self.lambda_growth > 1.0
            && self.max_stages > 0
            && self.step_size > 0.0
            && self.max_iterations > 0
            && self.margin >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search config {self:?}")))
        }
    }
}

/// Per-coordinate geometry of a search space, estimated from samples of
/// that space (training features or their abducted residuals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDomain {
    /// Unit of one standardized step.
    pub scale: Vec<f64>,
    /// L1 distance weights.
    pub weights: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchDomain {
    /// Scale = standard deviation, weight = 1/MAD (1 where either
    /// vanishes), bounds = observed range or unbounded.
    pub fn from_samples(samples: &Matrix, bounded: bool) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let mut d = SearchDomain {
            scale: Vec::new(),
            weights: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for j in 0..samples.cols() {
            let col = samples.column(j);
            let sd = std_dev(&col);
            d.scale.push(if sd > 0.0 { sd } else { 1.0 });
            let m = mad(&col)?;
            d.weights.push(if m > 0.0 { 1.0 / m } else { 1.0 });
            if bounded {
                d.lower.push(col.iter().copied().fold(f64::INFINITY, f64::min));
                d.upper.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            } else {
                d.lower.push(f64::NEG_INFINITY);
                d.upper.push(f64::INFINITY);
            }
        }
        Ok(d)
    }

    /// Unit scale and weights, no bounds.
    pub fn unit(dim: usize) -> Self {
        SearchDomain {
            scale: vec![1.0; dim],
            weights: vec![1.0; dim],
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub candidate: Vec<f64>,
    pub valid: bool,
    pub iterations: usize,
    /// Weighted L1 distance of every valid candidate that improved on the
    /// previous best, in the order they were accepted.
    pub accepted_distances: Vec<f64>,
}

struct Problem<'a> {
    score: &'a dyn ScoreFunction,
    x0: &'a [f64],
    target: u8,
    threshold: f64,
    scale: &'a [f64],
    /// L1 weight per standardized coordinate.
    l1: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    margin: f64,
}

impl Problem<'_> {
    fn point(&self, s: &[f64], x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = self.x0[i] + self.scale[i] * s[i];
        }
    }

    fn is_target(&self, r: f64) -> bool {
        u8::from(r > self.threshold) == self.target
    }

    fn distance(&self, s: &[f64]) -> f64 {
        s.iter().zip(&self.l1).map(|(v, w)| v.abs() * w).sum()
    }

    /// d(hinge)/dR: negative pushes the score up.
    fn hinge_slope(&self, r: f64) -> f64 {
        if self.target == 1 {
            if r < self.threshold + self.margin {
                -1.0
            } else {
                0.0
            }
        } else if r > self.threshold - self.margin {
            1.0
        } else {
            0.0
        }
    }
}

/// Searches for the point closest to `x0` (weighted L1) whose thresholded
/// score equals `target`.
///
/// `delta_bounds[i]` bounds `x_i - x0_i` (use `(0, 0)` to freeze a
/// coordinate); `domain` supplies scales, L1 weights and absolute bounds.
/// Returns the best valid candidate found, or the last iterate flagged
/// invalid.
pub fn gradient_cf_search(
    score: &dyn ScoreFunction,
    x0: &[f64],
    target: u8,
    threshold: f64,
    delta_bounds: &[(f64, f64)],
    domain: &SearchDomain,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let d = x0.len();
    for len in [score.dim(), delta_bounds.len(), domain.dim()] {
        if len != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                found: len,
            });
        }
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite factual".into()));
    }

    let mut grad = vec![0.0; d];
    let r0 = score.score_with_gradient(x0, &mut grad);
    if !r0.is_finite() {
        return Err(Error::NonFiniteLoss(0));
    }
    let mut problem = Problem {
        score,
        x0,
        target,
        threshold,
        scale: &domain.scale,
        l1: domain
            .weights
            .iter()
            .zip(&domain.scale)
            .map(|(w, s)| w * s)
            .collect(),
        lo: Vec::with_capacity(d),
        hi: Vec::with_capacity(d),
        margin: cfg.margin,
    };
    if problem.is_target(r0) {
        return Ok(SearchOutcome {
            candidate: x0.to_vec(),
            valid: true,
            iterations: 0,
            accepted_distances: vec![0.0],
        });
    }
    for i in 0..d {
        let (dlo, dhi) = delta_bounds[i];
        // Never exclude the factual itself, even if it lies outside the box.
        let blo = domain.lower[i].min(x0[i]) - x0[i];
        let bhi = domain.upper[i].max(x0[i]) - x0[i];
        problem.lo.push(dlo.max(blo) / domain.scale[i]);
        problem.hi.push(dhi.min(bhi) / domain.scale[i]);
    }
    if problem.lo.iter().zip(&problem.hi).all(|(l, h)| l == h) {
        return Ok(SearchOutcome {
            candidate: x0.to_vec(),
            valid: false,
            iterations: 0,
            accepted_distances: Vec::new(),
        });
    }

    let mut out = run_stages(&problem, &vec![0.0; d], cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        if out.valid {
            break;
        }
        let start: Vec<f64> = (0..d)
            .map(|i| rng.random_range(-1.0f64..1.0).clamp(problem.lo[i], problem.hi[i]))
            .collect();
        let next = run_stages(&problem, &start, cfg)?;
        out.iterations += next.iterations;
        if next.valid {
            out.candidate = next.candidate;
            out.valid = true;
            out.accepted_distances = next.accepted_distances;
        }
    }
    Ok(out)
}

fn run_stages(p: &Problem<'_>, start: &[f64], cfg: &SearchConfig) -> Result<SearchOutcome> {
    let d = start.len();
    let mut lambda = cfg.lambda_init;
    let mut s = start.to_vec();
    let mut x = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut accepted = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_stages {
        let mut found = false;
        for _ in 0..cfg.max_iterations {
            iterations += 1;
            p.point(&s, &mut x);
            let r = p.score.score_with_gradient(&x, &mut grad);
            if !r.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(iterations));
            }
            if p.is_target(r) {
                let dist = p.distance(&s);
                if best.as_ref().map_or(true, |(_, b)| dist < *b) {
                    best = Some((s.clone(), dist));
                    accepted.push(dist);
                }
                found = true;
            }

            let slope = p.hinge_slope(r);
            let mut g_max = 0.0f64;
            for i in 0..d {
                grad[i] *= slope * p.scale[i];
                if p.lo[i] < p.hi[i] {
                    g_max = g_max.max(grad[i].abs());
                }
            }
            let mut moved = false;
            for i in 0..d {
                let step = if g_max > 0.0 {
                    cfg.step_size * grad[i] / g_max
                } else {
                    0.0
                };
                let v = s[i] - step;
                let shrink = cfg.step_size * lambda * p.l1[i];
                let v = v.signum() * (v.abs() - shrink).max(0.0);
                let v = v.clamp(p.lo[i], p.hi[i]);
                moved |= v != s[i];
                s[i] = v;
            }
            if !moved {
                break;
            }
        }
        if found {
            lambda *= cfg.lambda_growth;
            s.clone_from(&best.as_ref().expect("found implies best").0);
        } else {
            lambda /= cfg.lambda_growth;
        }
    }

    let mut x_last = vec![0.0; d];
    p.point(&s, &mut x_last);
    Ok(match best {
        Some((bs, _)) => {
            let mut candidate = vec![0.0; d];
            p.point(&bs, &mut candidate);
            SearchOutcome {
                candidate,
                valid: true,
                iterations,
                accepted_distances: accepted,
            }
        }
        None => SearchOutcome {
            candidate: x_last,
            valid: false,
            iterations,
            accepted_distances: accepted,
        },
    })
}
