use ndarray::{Array2, ArrayView2};

use super::{check_inputs, ModelError, ModelKind, TrainConfig, TrainedClassifier, TrainingMeta};

/// Row-compressed copy of the design matrix. One-hot blocks make encoded
/// matrices mostly zeros, so gradient passes only visit stored entries.
struct SparseRows {
    start: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    m: usize,
}

impl SparseRows {
    fn new(x: ArrayView2<'_, f64>) -> Self {
        let mut start = Vec::with_capacity(x.nrows() + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        start.push(0);
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col.push(j as u32);
                    val.push(v);
                }
            }
            start.push(col.len());
        }
        Self {
            start,
            col,
            val,
            m: x.ncols(),
        }
    }

    fn n(&self) -> usize {
        self.start.len() - 1
    }

    /// Linear predictor for row `i`; `w[m]` is the intercept.
    fn margin(&self, i: usize, w: &[f64]) -> f64 {
        let mut z = w[self.m];
        for k in self.start[i]..self.start[i + 1] {
            z += w[self.col[k] as usize] * self.val[k];
        }
        z
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus `lambda/2 * |w|^2` (intercept excluded), and its
/// gradient, written into `grad`.
fn objective(rows: &SparseRows, y: &[bool], w: &[f64], lambda: f64, grad: &mut [f64]) -> f64 {
    let m = rows.m;
    let n = rows.n() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let z = rows.margin(i, w);
        let t = f64::from(u8::from(yi));
        // one exp serves both the loss and the residual
        let e = (-z.abs()).exp();
        loss += z.max(0.0) + e.ln_1p() - t * z;
        let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
        let r = p - t;
        for k in rows.start[i]..rows.start[i + 1] {
            grad[rows.col[k] as usize] += r * rows.val[k];
        }
        grad[m] += r;
    }
    let mut penalty = 0.0;
    for j in 0..m {
        grad[j] = grad[j] / n + lambda * w[j];
        penalty += w[j] * w[j];
    }
    grad[m] /= n;
    loss / n + 0.5 * lambda * penalty
}

fn mean_log_loss(rows: &SparseRows, y: &[bool], w: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            let z = rows.margin(i, w);
            softplus(z) - f64::from(u8::from(yi)) * z
        })
        .sum();
    total / y.len() as f64
}

/// The regularized training objective and its gradient at `w`
/// (m coefficients followed by the intercept).
pub fn logistic_objective(x: &Array2<f64>, y: &[bool], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    assert_eq!(w.len(), x.ncols() + 1);
    let rows = SparseRows::new(x.view());
    let mut grad = vec![0.0; w.len()];
    let loss = objective(&rows, y, w, lambda, &mut grad);
    (loss, grad)
}

/// Full-batch gradient descent from zero weights with a fixed step size.
pub fn train_logistic(
    x: &Array2<f64>,
    y: &[bool],
    config: &TrainConfig,
) -> Result<TrainedClassifier, ModelError> {
    train_logistic_with_validation(x, y, config, None)
}

pub(super) fn train_logistic_with_validation(
    x: &Array2<f64>,
    y: &[bool],
    config: &TrainConfig,
    validation: Option<(&Array2<f64>, &[bool])>,
) -> Result<TrainedClassifier, ModelError> {
    let config = TrainConfig {
        model_kind: ModelKind::Logistic,
        ..config.clone()
    };
    config.validate()?;
    check_inputs(x, y)?;
    let validation = match validation {
        Some((vx, vy)) if config.early_stopping => {
            check_inputs(vx, vy)?;
            if vx.ncols() != x.ncols() {
                return Err(ModelError::ShapeMismatch {
                    expected: x.ncols(),
                    found: vx.ncols(),
                });
            }
            Some((SparseRows::new(vx.view()), vy))
        }
        None if config.early_stopping => {
            return Err(ModelError::InvalidConfig(
                "early_stopping needs validation rows".into(),
            ))
        }
        _ => None,
    };

    let rows = SparseRows::new(x.view());
    let m = x.ncols();
    let mut w = vec![0.0; m + 1];
    let mut grad = vec![0.0; m + 1];
    let mut previous: Option<f64> = None;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut since_best = 0;

    let loss = loop {
        let loss = objective(&rows, y, &w, config.l2_lambda, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteLoss {
                iteration: iterations,
            });
        }
        if let Some((vrows, vy)) = &validation {
            let vloss = mean_log_loss(vrows, vy, &w);
            if best.as_ref().map_or(true, |(b, _, _)| vloss < *b) {
                best = Some((vloss, w.clone(), iterations));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break loss;
                }
            }
        }
        if previous.is_some_and(|p| (p - loss).abs() < config.tol) || iterations == config.max_iters {
            break loss;
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= config.learning_rate * gj;
        }
        previous = Some(loss);
        iterations += 1;
    };

    let (w, final_loss, iterations) = match best {
        Some((_, bw, at)) if validation.is_some() => {
            let l = objective(&rows, y, &bw, config.l2_lambda, &mut grad);
            (bw, l, at)
        }
        _ => (w, loss, iterations),
    };
    Ok(TrainedClassifier {
        model_kind: ModelKind::Logistic,
        feature_count: m,
        weights: Some(w),
        trees: None,
        training_meta: TrainingMeta {
            iterations_run: iterations,
            final_loss,
        },
    })
}

pub(super) fn predict(w: &[f64], x: ArrayView2<'_, f64>) -> Vec<f64> {
    let m = w.len() - 1;
    x.rows()
        .into_iter()
        .map(|row| {
            let z = w[m] + row.iter().zip(&w[..m]).map(|(a, b)| a * b).sum::<f64>();
            sigmoid(z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::classify;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, m: usize) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, m), |_| rng.gen_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        (x, y)
    }

    fn norm(w: &[f64]) -> f64 {
        w[..w.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_iterations_give_half() {
        let (x, y) = random_problem(1, 10, 3);
        let config = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let model = train_logistic(&x, &y, &config).unwrap();
        assert_eq!(model.training_meta.iterations_run, 0);
        assert!(model.predict_proba(x.view()).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn sigmoid_limits() {
        let w = [1.0, 0.0];
        let p = predict(&w, array![[0.0], [50.0], [-800.0], [800.0]].view());
        assert_eq!(p[0], 0.5);
        assert!(p[1] > 1.0 - 1e-12);
        assert!(p[2] >= 0.0 && p[2] < 1e-300);
        assert_eq!(p[3], 1.0);
    }

    #[test]
    fn separable_line_is_learned() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..50 {
            rows.extend([-1.0, 1.0]);
            y.extend([false, true]);
        }
        let x = Array2::from_shape_vec((100, 1), rows).unwrap();
        let model = train_logistic(&x, &y, &TrainConfig::default()).unwrap();
        let yhat = classify(&model.predict_proba(x.view()).unwrap(), 0.5);
        assert_eq!(yhat, y);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let (x, y) = random_problem(seed, 5, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lambda = 0.3;
            let (_, grad) = logistic_objective(&x, &y, &w, lambda);
            for j in 0..4 {
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (logistic_objective(&x, &y, &plus, lambda).0
                    - logistic_objective(&x, &y, &minus, lambda).0)
                    / (2.0 * h);
                let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
                assert!(rel < 1e-5, "seed {seed} coord {j}: fd {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn intercept_is_not_penalized() {
        let x = array![[0.0], [0.0]];
        let y = [true, true];
        let (_, g0) = logistic_objective(&x, &y, &[0.0, 1.0], 0.0);
        let (_, g1) = logistic_objective(&x, &y, &[0.0, 1.0], 100.0);
        assert_eq!(g0[1], g1[1]);
    }

    #[test]
    fn training_never_increases_loss_over_zero_weights() {
        for seed in 0..10 {
            let (x, y) = random_problem(seed, 60, 4);
            let config = TrainConfig::default();
            let model = train_logistic(&x, &y, &config).unwrap();
            let (zero_loss, _) = logistic_objective(&x, &y, &[0.0; 5], config.l2_lambda);
            assert!(model.training_meta.final_loss <= zero_loss + 1e-12);
        }
    }

    #[test]
    fn stronger_regularization_shrinks_weights() {
        for seed in 0..10 {
            let (x, y) = random_problem(seed, 80, 4);
            let fit = |lambda| {
                let config = TrainConfig {
                    l2_lambda: lambda,
                    ..TrainConfig::default()
                };
                train_logistic(&x, &y, &config).unwrap().weights.unwrap()
            };
            assert!(norm(&fit(1.0)) <= norm(&fit(1e-4)));
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = random_problem(3, 50, 3);
        let a = train_logistic(&x, &y, &TrainConfig::default()).unwrap();
        let b = train_logistic(&x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn huge_step_diverges_with_typed_error() {
        let x = array![[1e150], [-1e150]];
        let y = [true, false];
        let config = TrainConfig {
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_logistic(&x, &y, &config),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn early_stopping_keeps_best_validation_weights() {
        let (x, y) = random_problem(8, 40, 6);
        let (vx, vy) = random_problem(9, 40, 6);
        let config = TrainConfig {
            early_stopping: true,
            patience: 5,
            l2_lambda: 0.0,
            ..TrainConfig::default()
        };
        let stopped = crate::model::train(&x, &y, &config, Some((&vx, &vy))).unwrap();
        let full = train_logistic(&x, &y, &TrainConfig { early_stopping: false, ..config.clone() }).unwrap();
        assert!(stopped.training_meta.iterations_run <= full.training_meta.iterations_run);
        assert!(crate::model::train(&x, &y, &config, None).is_err());
    }
}
