//! Forward and backward passes through the full network, plus the
//! finite-difference gradient checker.

use rand_chacha::ChaCha8Rng;

use super::ops::{
    apply_dropout, conv1d, conv1d_backward, dense, dense_backward, dropout_backward,
    dropout_mask, maxpool, maxpool_backward, relu_backward, relu_inplace, sigmoid,
    tanh_backward, tanh_inplace, Conv1dShape,
};
use super::{ChannelTape, ForwardTape, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::rng::{rng, sub_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Runs one example through the network.
///
/// `input` is channel-major (n_channels x t_days). In train mode, dropout
/// masks are drawn from `rng` in a fixed order (per channel: stage 1 then
/// stage 2, then the hidden layer) and cached on the tape; eval mode draws
/// nothing and is deterministic.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: &[f64],
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, ForwardTape)> {
    let t = cfg.t_days;
    if input.len() != cfg.n_channels * t {
        return Err(Error::Shape {
            context: "forward input".into(),
            expected: format!("{} x {t}", cfg.n_channels),
            actual: input.len().to_string(),
        });
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward input".into()));
    }
    if mode == Mode::Train && cfg.dropout_p > 0.0 && rng.is_none() {
        return Err(Error::InvalidConfig("train-mode forward requires an rng".into()));
    }
    let stages = cfg.stage_lengths()?;
    let (f1, f2) = (cfg.conv1.filters, cfg.conv2.filters);
    let p = cfg.dropout_p;
    let train = mode == Mode::Train && p > 0.0;

    let shape1 = Conv1dShape {
        c_in: 1,
        l_in: t,
        c_out: f1,
        width: cfg.conv1.width,
        stride: cfg.conv1.stride,
    };
    let shape2 = Conv1dShape {
        c_in: f1,
        l_in: stages.p1,
        c_out: f2,
        width: cfg.conv2.width,
        stride: cfg.conv2.stride,
    };

    let mut flat = Vec::with_capacity(cfg.flatten_len()?);
    let mut channels = Vec::with_capacity(cfg.n_channels);
    for k in 0..cfg.n_channels {
        let ex = params.extractor_for(k);
        let x = &input[k * t..(k + 1) * t];

        let mut a1 = conv1d(&shape1, x, params.conv1_w(ex), params.conv1_b(ex))?;
        tanh_inplace(&mut a1);
        let mut d1 = a1.clone();
        let mask1 = train.then(|| {
            let m = dropout_mask(rng.as_deref_mut().unwrap(), d1.len(), p);
            apply_dropout(&mut d1, &m, p);
            m
        });
        let (p1, idx1) = maxpool(&d1, f1, stages.l1, cfg.pool.width, cfg.pool.stride);

        let mut a2 = conv1d(&shape2, &p1, params.conv2_w(ex), params.conv2_b(ex))?;
        tanh_inplace(&mut a2);
        let mut d2 = a2.clone();
        let mask2 = train.then(|| {
            let m = dropout_mask(rng.as_deref_mut().unwrap(), d2.len(), p);
            apply_dropout(&mut d2, &m, p);
            m
        });
        let (p2, idx2) = maxpool(&d2, f2, stages.l2, cfg.pool.width, cfg.pool.stride);

        flat.extend_from_slice(&p2);
        channels.push(ChannelTape {
            a1,
            mask1,
            p1,
            idx1,
            a2,
            mask2,
            idx2,
        });
    }

    let flatten = flat.len();
    let mut hidden_out = dense(&flat, params.dense_w(), params.dense_b(), cfg.hidden, flatten)?;
    relu_inplace(&mut hidden_out);
    let mut hidden_dropped = hidden_out.clone();
    let dense_mask = train.then(|| {
        let m = dropout_mask(rng.as_deref_mut().unwrap(), hidden_dropped.len(), p);
        apply_dropout(&mut hidden_dropped, &m, p);
        m
    });

    let logits: Vec<f64> = (0..cfg.n_tasks)
        .map(|c| {
            params
                .head_w(c)
                .iter()
                .zip(&hidden_dropped)
                .map(|(w, h)| w * h)
                .sum::<f64>()
                + params.head_b(c)
        })
        .collect();
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();

    let tape = ForwardTape {
        mode,
        input: input.to_vec(),
        channels,
        flat,
        hidden_out,
        hidden_dropped,
        dense_mask,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, tape))
}

/// Exact reverse-mode gradients for every parameter, given the gradient of
/// the loss with respect to each task's pre-sigmoid logit.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    tape: &ForwardTape,
    grad_logits: &[f64],
) -> Result<ModelParams> {
    if grad_logits.len() != cfg.n_tasks {
        return Err(Error::Shape {
            context: "backward grad_logits".into(),
            expected: cfg.n_tasks.to_string(),
            actual: grad_logits.len().to_string(),
        });
    }
    if tape.channels.len() != cfg.n_channels {
        return Err(Error::Shape {
            context: "backward tape".into(),
            expected: format!("{} channels", cfg.n_channels),
            actual: tape.channels.len().to_string(),
        });
    }
    let stages = cfg.stage_lengths()?;
    let (f1, f2) = (cfg.conv1.filters, cfg.conv2.filters);
    let p = cfg.dropout_p;
    let mut grads = params.zeros_like();

    // Heads and gradient into the dropped hidden vector.
    let mut g_hidden = vec![0.0; cfg.hidden];
    for (c, &gl) in grad_logits.iter().enumerate() {
        if gl != 0.0 {
            let hw = params.head_w(c);
            for j in 0..cfg.hidden {
                g_hidden[j] += gl * hw[j];
            }
        }
        let range = grads.head_w_range(c);
        for (g, &h) in grads.data[range].iter_mut().zip(&tape.hidden_dropped) {
            *g = gl * h;
        }
        let b_idx = grads.head_b_index(c);
        grads.data[b_idx] = gl;
    }

    if let Some(mask) = &tape.dense_mask {
        dropout_backward(&mut g_hidden, mask, p);
    }
    relu_backward(&mut g_hidden, &tape.hidden_out);

    let flatten = tape.flat.len();
    let (g_flat, g_dense_w, g_dense_b) =
        dense_backward(&tape.flat, params.dense_w(), &g_hidden, cfg.hidden, flatten);
    let (rdw, rdb) = (grads.dense_w_range(), grads.dense_b_range());
    grads.data[rdw].copy_from_slice(&g_dense_w);
    grads.data[rdb].copy_from_slice(&g_dense_b);

    let shape1 = Conv1dShape {
        c_in: 1,
        l_in: cfg.t_days,
        c_out: f1,
        width: cfg.conv1.width,
        stride: cfg.conv1.stride,
    };
    let shape2 = Conv1dShape {
        c_in: f1,
        l_in: stages.p1,
        c_out: f2,
        width: cfg.conv2.width,
        stride: cfg.conv2.stride,
    };
    let chunk = f2 * stages.p2;

    for (k, ch) in tape.channels.iter().enumerate() {
        let ex = params.extractor_for(k);
        let g_p2 = &g_flat[k * chunk..(k + 1) * chunk];

        let mut g_a2 = maxpool_backward(g_p2, &ch.idx2, f2 * stages.l2);
        if let Some(mask) = &ch.mask2 {
            dropout_backward(&mut g_a2, mask, p);
        }
        tanh_backward(&mut g_a2, &ch.a2);
        let (g_p1, g_w2, g_b2) = conv1d_backward(&shape2, &ch.p1, params.conv2_w(ex), &g_a2);

        let mut g_a1 = maxpool_backward(&g_p1, &ch.idx1, f1 * stages.l1);
        if let Some(mask) = &ch.mask1 {
            dropout_backward(&mut g_a1, mask, p);
        }
        tanh_backward(&mut g_a1, &ch.a1);
        let x = &tape.input[k * cfg.t_days..(k + 1) * cfg.t_days];
        let (_, g_w1, g_b1) = conv1d_backward(&shape1, x, params.conv1_w(ex), &g_a1);

        let (r2w, r2b) = (grads.conv2_w_range(ex), grads.conv2_b_range(ex));
        let (r1w, r1b) = (grads.conv1_w_range(ex), grads.conv1_b_range(ex));
        accumulate(&mut grads.data, r2w, &g_w2);
        accumulate(&mut grads.data, r2b, &g_b2);
        accumulate(&mut grads.data, r1w, &g_w1);
        accumulate(&mut grads.data, r1b, &g_b1);
    }
    Ok(grads)
}

fn accumulate(data: &mut [f64], range: std::ops::Range<usize>, src: &[f64]) {
    for (d, &s) in data[range].iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a gradient check: analytic backprop gradients next to central
/// finite differences of the same loss.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
    pub fn max_rel_err(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }
}

/// Verifies the backward pass against central finite differences on a
/// seeded random input and label set, returning the maximum relative error.
///
/// The loss is the mean per-task binary cross-entropy of a train-mode
/// forward pass whose dropout stream is re-seeded identically for every
/// evaluation, so the masks are frozen and the loss is a deterministic,
/// differentiable function of the parameters.
pub fn grad_check(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<f64> {
    Ok(grad_check_detailed(cfg, seed, eps)?.max_rel_err())
}

pub fn grad_check_detailed(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheck> {
    use rand::Rng;
    cfg.validate()?;
    let mut r = rng(sub_seed(seed, "gradcheck", 0));
    let input: Vec<f64> = (0..cfg.n_channels * cfg.t_days)
        .map(|_| r.gen_range(-1.5..1.5))
        .collect();
    let labels: Vec<f64> = (0..cfg.n_tasks).map(|_| f64::from(r.gen::<bool>())).collect();
    let params = super::init_params(cfg, sub_seed(seed, "gradcheck-init", 0))?;
    let dropout_seed = sub_seed(seed, "gradcheck-dropout", 0);

    let loss_of = |p: &ModelParams| -> Result<f64> {
        let mut dr = rng(dropout_seed);
        let (probs, _) = forward(p, cfg, &input, Mode::Train, Some(&mut dr))?;
        Ok(probs
            .iter()
            .zip(&labels)
            .map(|(&prob, &y)| -(y * prob.ln() + (1.0 - y) * (1.0 - prob).ln()))
            .sum::<f64>()
            / cfg.n_tasks as f64)
    };

    let mut dr = rng(dropout_seed);
    let (probs, tape) = forward(&params, cfg, &input, Mode::Train, Some(&mut dr))?;
    let grad_logits: Vec<f64> = probs
        .iter()
        .zip(&labels)
        .map(|(&p, &y)| (p - y) / cfg.n_tasks as f64)
        .collect();
    let analytic = backward(&params, cfg, &tape, &grad_logits)?;

    let mut numeric = vec![0.0; params.n_params()];
    let mut probe = params.clone();
    for i in 0..probe.n_params() {
        let original = probe.data[i];
        probe.data[i] = original + eps;
        let plus = loss_of(&probe)?;
        probe.data[i] = original - eps;
        let minus = loss_of(&probe)?;
        probe.data[i] = original;
        numeric[i] = (plus - minus) / (2.0 * eps);
    }

    Ok(GradCheck {
        analytic: analytic.data,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{init_params, ConvSpec, ModelConfig, PoolSpec};

    fn tiny_config(n_tasks: usize, dropout_p: f64) -> ModelConfig {
        ModelConfig {
            n_channels: 3,
            t_days: 20,
            conv1: ConvSpec { filters: 3, width: 3, stride: 2 },
            conv2: ConvSpec { filters: 2, width: 2, stride: 1 },
            pool: PoolSpec { width: 2, stride: 2 },
            dropout_p,
            hidden: 7,
            n_tasks,
            share_extractors: false,
        }
    }

    fn random_input(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut r = rng(seed);
        (0..cfg.n_channels * cfg.t_days).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_half_probability() {
        let cfg = tiny_config(4, 0.5);
        let params = crate::autonet::ModelParams::zeros(&cfg).unwrap();
        let input = vec![0.0; cfg.n_channels * cfg.t_days];
        let (probs, _) = forward(&params, &cfg, &input, Mode::Eval, None).unwrap();
        assert_eq!(probs, vec![0.5; 4]);
    }

    #[test]
    fn outputs_are_probabilities() {
        let cfg = tiny_config(9, 0.5);
        let params = init_params(&cfg, 3).unwrap();
        let (probs, _) = forward(&params, &cfg, &random_input(&cfg, 5), Mode::Eval, None).unwrap();
        assert_eq!(probs.len(), 9);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = tiny_config(2, 0.5);
        let params = init_params(&cfg, 3).unwrap();
        let input = random_input(&cfg, 5);
        let (a, _) = forward(&params, &cfg, &input, Mode::Eval, None).unwrap();
        let (b, _) = forward(&params, &cfg, &input, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_forward_with_same_seed_is_deterministic() {
        let cfg = tiny_config(2, 0.5);
        let params = init_params(&cfg, 3).unwrap();
        let input = random_input(&cfg, 5);
        let mut r1 = rng(11);
        let mut r2 = rng(11);
        let (a, _) = forward(&params, &cfg, &input, Mode::Train, Some(&mut r1)).unwrap();
        let (b, _) = forward(&params, &cfg, &input, Mode::Train, Some(&mut r2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let cfg = tiny_config(1, 0.0);
        let params = init_params(&cfg, 3).unwrap();
        let mut input = random_input(&cfg, 5);
        input[7] = f64::NAN;
        assert!(forward(&params, &cfg, &input, Mode::Eval, None).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let cfg = tiny_config(3, 0.0);
        let params = init_params(&cfg, 3).unwrap();
        let (_, tape) = forward(&params, &cfg, &random_input(&cfg, 5), Mode::Eval, None).unwrap();
        let grads = backward(&params, &cfg, &tape, &[0.0, 0.0, 0.0]).unwrap();
        assert!(grads.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_task_grad_touches_only_that_head() {
        let cfg = tiny_config(3, 0.0);
        let params = init_params(&cfg, 3).unwrap();
        let (_, tape) = forward(&params, &cfg, &random_input(&cfg, 5), Mode::Eval, None).unwrap();
        let grads = backward(&params, &cfg, &tape, &[0.0, 1.0, 0.0]).unwrap();
        for task in [0, 2] {
            assert!(grads.data[grads.head_w_range(task)].iter().all(|&g| g == 0.0));
            assert_eq!(grads.data[grads.head_b_index(task)], 0.0);
        }
        assert!(grads.data[grads.head_w_range(1)].iter().any(|&g| g != 0.0));
        assert!(grads.data[grads.dense_w_range()].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn head_independence_under_frozen_trunk() {
        let cfg = tiny_config(2, 0.0);
        let params = init_params(&cfg, 3).unwrap();
        let input = random_input(&cfg, 5);
        let (probs_before, _) = forward(&params, &cfg, &input, Mode::Eval, None).unwrap();

        let mut perturbed = params.clone();
        for v in &mut perturbed.data[params.head_w_range(1)] {
            *v += 0.37;
        }
        let (probs_after, _) = forward(&perturbed, &cfg, &input, Mode::Eval, None).unwrap();
        assert_eq!(probs_before[0], probs_after[0]);
        assert_ne!(probs_before[1], probs_after[1]);
    }

    #[test]
    fn grad_check_passes_without_dropout() {
        let cfg = tiny_config(2, 0.0);
        let err = grad_check(&cfg, 1, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn grad_check_passes_with_frozen_dropout() {
        let cfg = tiny_config(2, 0.5);
        let err = grad_check(&cfg, 1, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_detects_corrupted_conv2_backward() {
        let cfg = tiny_config(2, 0.0);
        let mut check = grad_check_detailed(&cfg, 1, 1e-5).unwrap();
        let params = crate::autonet::ModelParams::zeros(&cfg).unwrap();
        for ex in 0..cfg.n_channels {
            for g in &mut check.analytic[params.conv2_w_range(ex)] {
                *g = -*g;
            }
        }
        assert!(check.max_rel_err() > 1e-1, "sign flip went unnoticed");
    }

    #[test]
    fn grad_check_error_stable_under_smaller_eps() {
        let cfg = tiny_config(2, 0.0);
        let e1 = grad_check(&cfg, 1, 1e-5).unwrap();
        let e2 = grad_check(&cfg, 1, 5e-6).unwrap();
        assert!(e2 < e1 * 10.0 + 1e-7, "e1 = {e1}, e2 = {e2}");
    }

    #[test]
    fn shared_extractor_gradients_accumulate_across_channels() {
        let mut cfg = tiny_config(2, 0.0);
        cfg.share_extractors = true;
        let err = grad_check(&cfg, 4, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}
