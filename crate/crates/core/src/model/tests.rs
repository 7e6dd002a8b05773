use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn identity(d: usize) -> Standardizer {
    Standardizer {
        mean: vec![0.0; d],
        scale: vec![1.0; d],
    }
}

/// Least squares via the normal equations, solved by Gaussian elimination.
fn ols(x: &Matrix, y: &[f64]) -> Vec<f64> {
    let d = x.cols() + 1;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in x.iter_rows().zip(y) {
        let r: Vec<f64> = row.iter().copied().chain(std::iter::once(1.0)).collect();
        for i in 0..d {
            for j in 0..d {
                a[i][j] += r[i] * r[j];
            }
            a[i][d] += r[i] * t;
        }
    }
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}

fn random_rows(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    Matrix::new(n, d, data).unwrap()
}

#[test]
fn linear_fit_recovers_exact_coefficients() {
    let x = random_rows(1000, 2, 11);
    let y: Vec<f64> = x.iter_rows().map(|r| 2.0 * r[0] - 3.0 * r[1] + 1.0).collect();
    let oracle = ols(&x, &y);
    assert!((oracle[0] - 2.0).abs() < 1e-9 && (oracle[1] + 3.0).abs() < 1e-9);

    let kinds = [FeatureKind::Continuous; 2];
    let m = fit_regressor(names(2), &kinds, &x, &y, Architecture::Linear, &TrainConfig::default()).unwrap();
    let (coef, intercept) = m.linear_coefficients().unwrap();
    assert!((coef[0] - oracle[0]).abs() < 1e-3, "{coef:?}");
    assert!((coef[1] - oracle[1]).abs() < 1e-3, "{coef:?}");
    assert!((intercept - oracle[2]).abs() < 1e-3, "{intercept}");
}

#[test]
fn null_target_gives_null_model() {
    let x = random_rows(50, 3, 2);
    let y = vec![0.0; 50];
    let kinds = [FeatureKind::Continuous; 3];
    let m = fit_regressor(
        names(3),
        &kinds,
        &x,
        &y,
        Architecture::Linear,
        &TrainConfig::default(),
    )
    .unwrap();
    assert!(m.parameters().iter().all(|&p| p == 0.0));
    assert!(x.iter_rows().all(|r| m.predict(r).unwrap() == 0.0));
}

#[test]
fn predict_by_hand() {
    let m = RegressorModel::from_parts(
        names(1),
        Architecture::Linear,
        identity(1),
        0.0,
        1.0,
        vec![1.0, 5.0],
    )
    .unwrap();
    assert!((m.predict(&[-1.0]).unwrap() - 4.0).abs() <= 1e-9);
    assert!(matches!(
        m.predict(&[1.0, 2.0]),
        Err(Error::ShapeMismatch { .. })
    ));

    let zero = RegressorModel::from_parts(
        names(2),
        Architecture::Linear,
        identity(2),
        0.0,
        1.0,
        vec![0.0, 0.0, 3.5],
    )
    .unwrap();
    assert_eq!(zero.predict(&[10.0, -7.0]).unwrap(), 3.5);
}

#[test]
fn dead_mlp_outputs_final_bias() {
    let arch = Architecture::mlp(&[4, 3], Activation::Tanh);
    let mut params = vec![0.0; arch.parameter_count(2)];
    *params.last_mut().unwrap() = -1.25;
    let m = RegressorModel::from_parts(names(2), arch, identity(2), 0.0, 1.0, params).unwrap();
    assert_eq!(m.predict(&[0.3, 9.0]).unwrap(), -1.25);
}

#[test]
fn parameter_count_is_checked() {
    let arch = Architecture::mlp(&[16, 16], Activation::Relu);
    assert_eq!(arch.parameter_count(2), 2 * 16 + 16 + 16 * 16 + 16 + 16 + 1);
    assert!(matches!(
        ClassifierModel::from_parts(names(2), arch, identity(2), vec![0.0; 3]),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn regressor_shape_errors() {
    let x = random_rows(10, 2, 1);
    let kinds = [FeatureKind::Continuous; 2];
    let cfg = TrainConfig::default();
    assert!(matches!(
        fit_regressor(names(2), &kinds, &x, &[0.0; 9], Architecture::Linear, &cfg),
        Err(Error::ShapeMismatch { .. })
    ));
    let one = random_rows(1, 2, 1);
    assert!(matches!(
        fit_regressor(names(2), &kinds, &one, &[0.0], Architecture::Linear, &cfg),
        Err(Error::DegenerateData(_))
    ));
}

#[test]
fn separable_toy_is_learned_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..200 {
        let c = if i % 2 == 0 { -2.0 } else { 2.0 };
        rows.push(vec![c + rng.random_range(-0.5..0.5), c + rng.random_range(-0.5..0.5)]);
        y.push(u8::from(i % 2 == 1));
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let m = fit_classifier(
        names(2),
        &[FeatureKind::Continuous; 2],
        &x,
        &y,
        Architecture::mlp(&[16, 16], Activation::Relu),
        &TrainConfig::default(),
    )
    .unwrap();
    assert_eq!(m.training_accuracy(), 1.0);
}

#[test]
fn coin_flip_labels_give_chance_accuracy() {
    let x = random_rows(2000, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y: Vec<u8> = (0..2000).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let m = fit_classifier(
        names(2),
        &[FeatureKind::Continuous; 2],
        &x,
        &y,
        Architecture::Linear,
        &TrainConfig::default(),
    )
    .unwrap();
    assert!((m.training_accuracy() - 0.5).abs() <= 0.05, "{}", m.training_accuracy());
}

#[test]
fn single_class_is_rejected() {
    let x = random_rows(20, 2, 3);
    assert!(matches!(
        fit_classifier(
            names(2),
            &[FeatureKind::Continuous; 2],
            &x,
            &[1; 20],
            Architecture::Linear,
            &TrainConfig::default()
        ),
        Err(Error::SingleClassData)
    ));
}

#[test]
fn linear_gradient_is_the_weight_vector() {
    let w = vec![0.7, -1.3, 2.0];
    let params = w.iter().copied().chain([0.4]).collect();
    let m = RegressorModel::from_parts(names(3), Architecture::Linear, identity(3), 0.0, 1.0, params)
        .unwrap();
    assert_eq!(input_gradient(&m, &[1.0, 2.0, 3.0]).unwrap(), w);
    assert!(matches!(
        input_gradient(&m, &[1.0]),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn saturated_classifier_has_vanishing_gradient() {
    // Output logit 28 + x gives a score within 1e-12 of one.
    let params = vec![1.0, 28.0];
    let m = ClassifierModel::from_parts(names(1), Architecture::Linear, identity(1), params).unwrap();
    let s = m.score(&[0.0]).unwrap();
    assert!(1.0 - s < 1e-12 && 1.0 - s > 0.0);
    let g = input_gradient(&m, &[0.0]).unwrap();
    assert!(g[0].abs() < 1e-11);
}

fn random_mlp(rng: &mut ChaCha8Rng, d: usize, act: Activation) -> RegressorModel {
    let arch = Architecture::mlp(&[5, 4], act);
    let params = (0..arch.parameter_count(d))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let st = Standardizer {
        mean: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    RegressorModel::from_parts(names(d), arch, st, 0.3, 1.7, params).unwrap()
}

pub(crate) fn finite_difference<M: Differentiable>(m: &M, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += h;
            dn[i] -= h;
            (m.evaluate(&up) - m.evaluate(&dn)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let d = rng.random_range(1..5);
        let m = random_mlp(&mut rng, d, Activation::Tanh);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = input_gradient(&m, &x).unwrap();
        let fd = finite_difference(&m, &x, 1e-5);
        for (a, n) in g.iter().zip(&fd) {
            let denom = a.abs().max(n.abs());
            assert!(denom < 1e-7 || (a - n).abs() / denom <= 1e-4, "{a} vs {n}");
        }
    }
}

#[test]
fn fitting_is_deterministic() {
    let x = random_rows(300, 2, 4);
    let y: Vec<u8> = x.iter_rows().map(|r| u8::from(r[0] * r[1] > 0.0)).collect();
    let arch = Architecture::mlp(&[8, 8], Activation::Relu);
    let cfg = TrainConfig {
        seed: 77,
        epochs: 20,
        ..TrainConfig::default()
    };
    let kinds = [FeatureKind::Continuous; 2];
    let a = fit_classifier(names(2), &kinds, &x, &y, arch.clone(), &cfg).unwrap();
    let b = fit_classifier(names(2), &kinds, &x, &y, arch, &cfg).unwrap();
    let bits = |m: &ClassifierModel| m.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn model_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_mlp(&mut rng, 3, Activation::Tanh);
    let json = serde_json::to_string(&m).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["architecture", "input_names", "standardization", "parameters"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let back: RegressorModel = serde_json::from_str(&json).unwrap();
    let x = [0.1, -0.4, 2.0];
    assert_eq!(m.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());

    let mut broken = v.clone();
    broken["parameters"] = serde_json::json!([1.0]);
    assert!(serde_json::from_value::<RegressorModel>(broken).is_err());
}

proptest! {
    #[test]
    fn score_is_bounded(seed in any::<u64>(), x in proptest::collection::vec(prop_oneof![
        -1e6f64..1e6, Just(1e6), Just(-1e6), Just(0.0)
    ], 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::mlp(&[16, 16], Activation::Relu);
        let params = (0..arch.parameter_count(3)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = ClassifierModel::from_parts(names(3), arch, identity(3), params).unwrap();
        let s = m.score(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let g = input_gradient(&m, &x).unwrap();
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}
