//! L2-penalized logistic regression trained by full-batch gradient descent
//! with momentum, the optimizer family shared with the network trainer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autonet::ops::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrConfig {
    pub max_iters: usize,
    /// Stop when the full gradient norm (weights and bias) drops below this.
    pub tol: f64,
    pub momentum: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-6,
            momentum: 0.9,
        }
    }
}

/// Minimizes mean BCE + (l2/2) * ||w||^2 (bias unpenalized) by full-batch
/// gradient descent with momentum until the gradient norm falls below
/// `cfg.tol` or `cfg.max_iters` is reached. The step size is set from a
/// power-iteration bound on the data curvature, so no learning rate needs
/// tuning. Deterministic.
pub fn lr_train(
    inputs: &[Vec<f64>],
    labels: &[f64],
    l2: f64,
    cfg: &LrConfig,
) -> Result<LinearModel> {
    lr_train_from(inputs, labels, l2, cfg, None)
}

/// [`lr_train`] with an optional warm start (used by grid searches).
pub fn lr_train_from(
    inputs: &[Vec<f64>],
    labels: &[f64],
    l2: f64,
    cfg: &LrConfig,
    init: Option<&LinearModel>,
) -> Result<LinearModel> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    let p = inputs[0].len();
    if inputs.iter().any(|x| x.len() != p) {
        return Err(Error::Shape {
            context: "lr_train inputs".into(),
            expected: p.to_string(),
            actual: "ragged rows".into(),
        });
    }
    let has_pos = labels.iter().any(|&y| y > 0.5);
    let has_neg = labels.iter().any(|&y| y <= 0.5);
    if !has_pos || !has_neg {
        return Err(Error::SingleClass);
    }

    let step = 0.5 / (0.25 * data_curvature(inputs) + l2).max(1e-12);
    let mut weights = init.map_or_else(|| vec![0.0; p], |m| m.weights.clone());
    let mut bias = init.map_or(0.0, |m| m.bias);
    let mut vel_w = vec![0.0; p];
    let mut vel_b = 0.0;

    for _ in 0..cfg.max_iters {
        let (grad_w, grad_b) = gradient(inputs, labels, &weights, bias, l2);
        let norm = (grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b).sqrt();
        if norm < cfg.tol {
            break;
        }
        for ((w, g), v) in weights.iter_mut().zip(&grad_w).zip(&mut vel_w) {
            *v = cfg.momentum * *v - step * g;
            *w += *v;
        }
        vel_b = cfg.momentum * vel_b - step * grad_b;
        bias += vel_b;
    }
    Ok(LinearModel { weights, bias, l2 })
}

pub fn lr_predict(model: &LinearModel, input: &[f64]) -> f64 {
    let z = model
        .weights
        .iter()
        .zip(input)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + model.bias;
    sigmoid(z)
}

/// Objective value: mean BCE + (l2/2) * ||w||^2.
pub fn lr_objective(inputs: &[Vec<f64>], labels: &[f64], model: &LinearModel) -> f64 {
    let n = inputs.len() as f64;
    let bce: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias;
            // log(1 + e^z) - y z, the numerically stable BCE-from-logit form.
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - y * z
        })
        .sum::<f64>()
        / n;
    bce + 0.5 * model.l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn gradient(
    inputs: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = inputs.len();
    let p = weights.len();
    // Fixed 64-row chunks with an ordered reduction keep the result
    // independent of the worker count.
    let partials: Vec<(Vec<f64>, f64)> = inputs
        .par_chunks(64)
        .zip(labels.par_chunks(64))
        .map(|(xs, ys)| {
            let mut gw = vec![0.0; p];
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let z = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
                let r = sigmoid(z) - y;
                for (g, &v) in gw.iter_mut().zip(x) {
                    *g += r * v;
                }
                gb += r;
            }
            (gw, gb)
        })
        .collect();

    let mut grad_w = vec![0.0; p];
    let mut grad_b = 0.0;
    for (gw, gb) in partials {
        for (a, b) in grad_w.iter_mut().zip(&gw) {
            *a += b;
        }
        grad_b += gb;
    }
    let inv_n = 1.0 / n as f64;
    for (g, &w) in grad_w.iter_mut().zip(weights) {
        *g = *g * inv_n + l2 * w;
    }
    (grad_w, grad_b * inv_n)
}

/// Largest eigenvalue of (1/n) X~^T X~ (features plus the bias column),
/// estimated by 30 power iterations from a deterministic start.
fn data_curvature(inputs: &[Vec<f64>]) -> f64 {
    let n = inputs.len();
    let p = inputs[0].len() + 1;
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut lambda = 0.0;
    for _ in 0..30 {
        // u = X~ v, then v' = X~^T u / n.
        let u: Vec<f64> = inputs
            .par_iter()
            .map(|x| x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[p - 1])
            .collect();
        let mut next = vec![0.0; p];
        for (x, &ui) in inputs.iter().zip(&u) {
            for (nv, &xv) in next.iter_mut().zip(x) {
                *nv += ui * xv;
            }
            next[p - 1] += ui;
        }
        for nv in next.iter_mut() {
            *nv /= n as f64;
        }
        lambda = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda <= 1e-30 {
            return 0.0;
        }
        for nv in next.iter_mut() {
            *nv /= lambda;
        }
        v = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;

    #[test]
    fn separable_toy_reaches_auc_one() {
        let inputs = vec![
            vec![-2.0, -1.5],
            vec![-1.0, -2.0],
            vec![-1.5, -0.5],
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![1.5, 0.5],
        ];
        let labels = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let model = lr_train(&inputs, &labels, 0.001, &LrConfig::default()).unwrap();
        let scores: Vec<f64> = inputs.iter().map(|x| lr_predict(&model, x)).collect();
        let bools: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
        assert_eq!(auc(&scores, &bools).unwrap(), 1.0);
    }

    #[test]
    fn huge_l2_collapses_weights_to_zero() {
        let inputs = vec![vec![-1.0], vec![1.0], vec![-0.5], vec![2.0]];
        let labels = vec![0.0, 1.0, 0.0, 1.0];
        let model = lr_train(&inputs, &labels, 1e6, &LrConfig::default()).unwrap();
        assert!(model.weights[0].abs() < 1e-4, "w = {}", model.weights[0]);
        let p = lr_predict(&model, &[0.7]);
        assert!((p - sigmoid(model.bias)).abs() < 1e-3);
    }

    #[test]
    fn one_dimensional_sign_matches_grid_search() {
        let inputs = vec![vec![-1.0], vec![1.0]];
        let labels = vec![0.0, 1.0];
        let l2 = 0.01;
        let model = lr_train(&inputs, &labels, l2, &LrConfig::default()).unwrap();
        assert!(model.weights[0] > 0.0);

        // Brute-force grid over (w, b).
        let mut best = f64::INFINITY;
        let mut at = (0.0, 0.0);
        for wi in -400..=400 {
            for bi in -400..=400 {
                let candidate = LinearModel {
                    weights: vec![wi as f64 * 0.01],
                    bias: bi as f64 * 0.01,
                    l2,
                };
                let obj = lr_objective(&inputs, &labels, &candidate);
                if obj < best {
                    best = obj;
                    at = (candidate.weights[0], candidate.bias);
                }
            }
        }
        assert!(at.0 > 0.0, "grid optimum at w = {}", at.0);
        let ours = lr_objective(&inputs, &labels, &model);
        assert!(ours <= best + 1e-6, "ours {ours} vs grid {best}");
    }

    #[test]
    fn convexity_two_inits_agree() {
        let inputs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 / 10.0).sin(), (i as f64 / 7.0).cos(), i as f64 * 0.05])
            .collect();
        let labels: Vec<f64> = (0..40).map(|i| f64::from(i % 3 == 0)).collect();
        let cfg = LrConfig {
            max_iters: 100_000,
            tol: 1e-10,
            momentum: 0.9,
        };
        let cold = lr_train(&inputs, &labels, 0.1, &cfg).unwrap();
        let warm_start = LinearModel {
            weights: vec![2.0, -3.0, 1.0],
            bias: 0.5,
            l2: 0.1,
        };
        let warm = lr_train_from(&inputs, &labels, 0.1, &cfg, Some(&warm_start)).unwrap();
        let a = lr_objective(&inputs, &labels, &cold);
        let b = lr_objective(&inputs, &labels, &warm);
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inputs = vec![
            vec![0.3, -1.2],
            vec![1.1, 0.4],
            vec![-0.7, 0.9],
            vec![0.2, 0.1],
        ];
        let labels = vec![1.0, 0.0, 1.0, 0.0];
        let l2 = 0.05;
        let weights = vec![0.35, -0.6];
        let bias = 0.12;
        let (gw, gb) = gradient(&inputs, &labels, &weights, bias, l2);

        let eps = 1e-6;
        let obj = |w: &[f64], b: f64| {
            lr_objective(
                &inputs,
                &labels,
                &LinearModel { weights: w.to_vec(), bias: b, l2 },
            )
        };
        for i in 0..2 {
            let mut wp = weights.clone();
            wp[i] += eps;
            let mut wm = weights.clone();
            wm[i] -= eps;
            let fd = (obj(&wp, bias) - obj(&wm, bias)) / (2.0 * eps);
            let rel = (gw[i] - fd).abs() / gw[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-8, "w[{i}]: analytic {} vs fd {fd}", gw[i]);
        }
        let fd_b = (obj(&weights, bias + eps) - obj(&weights, bias - eps)) / (2.0 * eps);
        let rel = (gb - fd_b).abs() / gb.abs().max(fd_b.abs()).max(1e-8);
        assert!(rel < 1e-8, "bias: analytic {gb} vs fd {fd_b}");
    }

    #[test]
    fn single_class_is_an_error() {
        let inputs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            lr_train(&inputs, &[1.0, 1.0], 0.1, &LrConfig::default()),
            Err(Error::SingleClass)
        ));
    }
}
